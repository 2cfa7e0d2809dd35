#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "skytrack/commands.hpp"
#include "skytrack/pipeline.hpp"

namespace fs = std::filesystem;
using namespace skytrack;

namespace {

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

int run(const std::string& manifest, const std::string& config, const std::string& out, bool quiet) {
  RunOptions options;
  options.out_dir = fs::path(out);
  options.log = quiet ? nullptr : &std::cerr;
  const auto frames = run_pipeline(manifest, config_or_default(config), options);
  std::size_t ok = 0;
  for (const auto& f : frames) ok += f.ok ? 1 : 0;
  std::cout << ok << " of " << frames.size() << " frames solved; results in " << (fs::path(out) / "results.csv").string()
            << '\n';
  return 0;
}

int cv(const std::string& manifest, const std::string& grid, const std::string& config, const std::string& out) {
  const CvSpec spec = cv_spec_from(read_key_values(grid));
  std::optional<std::ofstream> file;
  if (!out.empty()) {
    file.emplace(out);
    if (!*file) throw IoError("cannot write " + out);
  }
  std::ostream& table = file ? static_cast<std::ostream&>(*file) : std::cout;
  const CvResult r = cmd_cv(manifest, spec, config_or_default(config), table);
  std::cerr << "best: kernel=" << to_string(r.best.kernel.kind) << " C=" << r.best.c_reg
            << " epsilon=" << r.best.epsilon << " gamma=" << r.best.kernel.gamma << " beta=" << r.best.kernel.coef0
            << " d=" << r.best.kernel.degree << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wind velocity fields and cloud pathlines from thermal sky image sequences"};
  app.require_subcommand(1);

  std::string manifest, config, out, spec, results, grid;
  bool quiet = false;
  PlotOptions plot_options;

  auto* run_cmd = app.add_subcommand("run", "process a frame sequence");
  run_cmd->add_option("manifest", manifest, "manifest JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out, "output directory")->required();
  run_cmd->add_flag("--quiet", quiet, "do not echo the per-frame log");

  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic scene to a dataset");
  synth_cmd->add_option("spec", spec, "scene JSON")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", out, "dataset directory")->required();

  auto* plot_cmd = app.add_subcommand("plot", "draw heatmap, isolines and samples per frame and layer");
  plot_cmd->add_option("results", results, "results.csv of a run")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", out, "image directory")->required();
  plot_cmd->add_option("--levels", plot_options.isoline_levels, "isolines per family")->check(CLI::PositiveNumber);
  plot_cmd->add_option("--stride", plot_options.quiver_stride, "draw every n-th sample")->check(CLI::PositiveNumber);

  auto* cv_cmd = app.add_subcommand("cv", "cross-validate regressor parameters over a sequence");
  cv_cmd->add_option("manifest", manifest, "manifest JSON")->required()->check(CLI::ExistingFile);
  cv_cmd->add_option("--grid", grid, "parameter grid file")->required()->check(CLI::ExistingFile);
  cv_cmd->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
  cv_cmd->add_option("--out", out, "write the table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(manifest, config, out, quiet);
    if (*synth_cmd) {
      cmd_synth(spec, out);
      std::cout << "dataset written to " << out << '\n';
      return 0;
    }
    if (*plot_cmd) {
      const int n = cmd_plot(results, out, plot_options);
      std::cout << n << " images written to " << out << '\n';
      return 0;
    }
    if (*cv_cmd) return cv(manifest, grid, config, out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
