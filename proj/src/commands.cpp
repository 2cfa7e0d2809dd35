#include "skytrack/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "skytrack/io.hpp"

namespace skytrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
void take(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError("scene spec is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw InputError("scene spec must be a JSON object");
  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty())
    throw InputError("scene spec declares no layers");
  SceneSpec s;
  try {
    take(j, "rows", s.rows);
    take(j, "cols", s.cols);
    int ell = 6;
    take(j, "ell", ell);
    s.frames = ell + 15;
    take(j, "frames", s.frames);
    take(j, "frame_rate", s.frame_rate);
    take(j, "delta", s.vector_scale);
    if (j.contains("diag_fov_deg")) s.diag_fov = j.at("diag_fov_deg").get<double>() * std::numbers::pi / 180.0;
    take(j, "air_temp_k", s.air_temp);
    take(j, "sky_temp_k", s.sky_temp);
    take(j, "lapse_rate", s.lapse_rate);
    take(j, "noise_k", s.noise_k);
    take(j, "mask_opacity", s.mask_opacity);
    take(j, "edge_softness", s.edge_softness);
    take(j, "noise_seed", s.noise_seed);
    take(j, "start_time", s.start_time);
    for (const auto& lj : j.at("layers")) {
      SceneLayer l;
      if (lj.contains("velocity_ms")) {
        const auto v = lj.at("velocity_ms").get<std::vector<double>>();
        if (v.size() != 2) throw InputError("velocity_ms needs two components");
        l.velocity_ms = Vec2(v[0], v[1]);
      }
      take(lj, "height_m", l.height_m);
      take(lj, "temp_offset_k", l.temp_offset_k);
      take(lj, "texture_amplitude_k", l.texture_amplitude_k);
      take(lj, "coverage", l.coverage);
      take(lj, "blob_radius_px", l.blob_radius_px);
      take(lj, "seed", l.seed);
      s.layers.push_back(l);
    }
  } catch (const json::exception& e) {
    throw InputError("scene spec: " + std::string(e.what()));
  }
  if (s.frames < 2) throw InputError("scene spec needs at least two frames");
  return s;
}

SceneSpec read_scene_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_spec(ss.str());
}

void write_dataset(const SceneSpec& spec, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const Scene scene = synth_scene(spec);

  std::vector<ManifestEntry> manifest;
  json truth;
  truth["indistinguishable_layers"] = scene.indistinguishable_layers;
  truth["frame_rate"] = spec.frame_rate;
  json layers = json::array();
  for (std::size_t c = 0; c < spec.layers.size(); ++c) {
    const auto& l = spec.layers[c];
    const Vec2 px = metric_to_pixel_velocity(spec, l);
    layers.push_back({{"velocity_ms", {l.velocity_ms.x(), l.velocity_ms.y()}},
                      {"velocity_px", {px.x(), px.y()}},
                      {"height_m", l.height_m},
                      {"speed_ms", l.velocity_ms.norm()},
                      {"direction_rad", std::atan2(l.velocity_ms.y(), l.velocity_ms.x())}});
  }
  truth["layers"] = layers;
  json frames = json::array();
  char name[64];
  for (std::size_t k = 0; k < scene.frames.size(); ++k) {
    const auto& f = scene.frames[k];
    ManifestEntry e;
    std::snprintf(name, sizeof name, "frame_%04zu.tsky", k);
    e.frame_path = name;
    write_tsky(out_dir / name, f.frame.temps());
    std::snprintf(name, sizeof name, "mask_%04zu.tmsk", k);
    e.mask_path = fs::path(name);
    write_tmsk(out_dir / name, f.mask.bits);
    e.timestamp = f.frame.meta().timestamp;
    e.sun_elevation_deg = 90.0;
    e.sun_azimuth_deg = 0.0;
    e.air_temp_k = spec.air_temp;
    manifest.push_back(e);
    frames.push_back({{"index", k}, {"visible_fraction", f.truth.visible_fraction}});
  }
  truth["frames"] = frames;
  write_manifest(out_dir / "manifest.json", manifest);
  std::ofstream t(out_dir / "truth.json");
  if (!t) throw IoError("cannot write truth.json");
  t << truth.dump(2) << '\n';
  if (!t) throw IoError("failed writing truth.json");
}

void cmd_synth(const fs::path& spec_path, const fs::path& out_dir) { write_dataset(read_scene_spec(spec_path), out_dir); }

// ---------------------------------------------------------------------------
// Plots

namespace {

using Table = std::vector<std::map<std::string, std::string>>;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file " + path.string());
  const auto header = split_csv(line);
  Table rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw IoError("malformed row in " + path.string());
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::string& cell(const std::map<std::string, std::string>& row, const std::string& key) {
  const auto it = row.find(key);
  if (it == row.end()) throw IoError("results table lacks column " + key);
  return it->second;
}

// Blue-to-yellow ramp for the temperature heatmap.
std::string heat_colour(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr double stops[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  const double x = t * 4.0;
  const int i = std::min(3, static_cast<int>(x));
  const double f = x - i;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

void polylines(std::ostream& out, const std::vector<Polyline>& lines, const char* colour, double px) {
  char buf[64];
  for (const auto& l : lines) {
    if (l.points.size() < 2) continue;
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
    for (const auto& p : l.points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", (p.x() + 0.5) * px, (p.y() + 0.5) * px);
      out << buf;
    }
    out << "\"/>\n";
  }
}

}  // namespace

int cmd_plot(const fs::path& results_csv, const fs::path& out_dir, const PlotOptions& options) {
  if (options.isoline_levels < 1 || options.quiver_stride < 1) throw InputError("invalid plot options");
  const fs::path base = results_csv.parent_path();
  const Table table = read_csv(results_csv);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  int written = 0;
  for (const auto& row : table) {
    if (cell(row, "status") != "ok") continue;
    const int layer = std::stoi(cell(row, "layer"));
    const FieldGrids f = read_tfld(base / cell(row, "field_file"));
    const fs::path frame_file(cell(row, "frame_file"));
    const Grid temps = read_tsky(frame_file.is_absolute() ? frame_file : base / frame_file);
    if (temps.rows() != f.u.rows() || temps.cols() != f.u.cols()) throw IoError("frame and field sizes differ");
    const Table samples = read_csv(base / cell(row, "samples_file"));

    const double px = 8.0;  // SVG units per pixel
    const double w = static_cast<double>(temps.cols()) * px, h = static_cast<double>(temps.rows()) * px;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
        << w << ' ' << h << "\">\n<g id=\"heatmap\" shape-rendering=\"crispEdges\">\n";
    const double lo = temps.minCoeff(), hi = temps.maxCoeff();
    for (Eigen::Index r = 0; r < temps.rows(); ++r)
      for (Eigen::Index c = 0; c < temps.cols(); ++c) {
        const double t = hi > lo ? (temps(r, c) - lo) / (hi - lo) : 0.5;
        svg << "<rect x=\"" << c * px << "\" y=\"" << r * px << "\" width=\"" << px << "\" height=\"" << px
            << "\" fill=\"" << heat_colour(t) << "\"/>\n";
      }
    svg << "</g>\n<g id=\"streamlines\">\n";
    polylines(svg, extract_isolines(f.phi, options.isoline_levels), "#00a000", px);
    svg << "</g>\n<g id=\"potential\">\n";
    polylines(svg, extract_isolines(f.psi, options.isoline_levels), "#d00000", px);
    svg << "</g>\n<g id=\"quiver\" stroke=\"white\" stroke-width=\"1\">\n";

    // Arrows of this layer's samples, longest drawn as three pixels.
    const std::string zkey = layer == 0 ? "z0" : "z1";
    double vmax = 0.0;
    for (const auto& s : samples)
      vmax = std::max(vmax, std::hypot(std::stod(cell(s, "u")), std::stod(cell(s, "v"))));
    int k = 0;
    char buf[160];
    for (const auto& s : samples) {
      if (std::stod(cell(s, zkey)) < 0.5 || (k++ % options.quiver_stride) != 0) continue;
      const double u = std::stod(cell(s, "u")), v = std::stod(cell(s, "v"));
      if (vmax <= 0.0 || std::hypot(u, v) == 0.0) continue;
      const double x0 = (std::stod(cell(s, "x")) + 0.5) * px, y0 = (std::stod(cell(s, "y")) + 0.5) * px;
      const double x1 = x0 + 3.0 * px * u / vmax, y1 = y0 + 3.0 * px * v / vmax;
      std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>", x0, y0, x1, y1);
      svg << buf;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.5\" fill=\"white\"/>\n", x1, y1);
      svg << buf;
    }
    svg << "</g>\n</svg>\n";

    char name[64];
    std::snprintf(name, sizeof name, "frame_%04d_layer_%d.svg", std::stoi(cell(row, "frame")), layer);
    std::ofstream out(out_dir / name);
    if (!out) throw IoError("cannot write " + (out_dir / name).string());
    out << svg.str();
    ++written;
  }
  return written;
}

// ---------------------------------------------------------------------------

CvResult cmd_cv(const fs::path& manifest, const CvSpec& grid, const PipelineConfig& config, std::ostream& table) {
  grid.validate();
  const auto entries = read_manifest(manifest);
  if (entries.size() < 2) throw InputError("the manifest needs at least two frames");
  Pipeline pipeline(config);
  CvResult total;
  int fits = 0;
  pipeline.on_layer_data = [&](std::int64_t frame, int layer, const CvData& data) {
    CvSpec spec = grid;
    spec.seed = derive_seed(grid.seed, static_cast<std::uint64_t>(frame) * 2 + static_cast<std::uint64_t>(layer));
    const CvResult r = cross_validate(data, spec);
    if (fits == 0) {
      total = r;
    } else {
      for (std::size_t k = 0; k < r.rows.size(); ++k) {
        auto& t = total.rows[k];
        t.mae += r.rows[k].mae;
        t.wmae += r.rows[k].wmae;
        t.div += r.rows[k].div;
        t.curl += r.rows[k].curl;
        t.seconds += r.rows[k].seconds;
      }
    }
    ++fits;
  };
  for (std::size_t i = 0; i < entries.size(); ++i) pipeline.step(entries[i], static_cast<std::int64_t>(i));
  if (fits == 0) throw InputError("no frame produced samples to cross-validate");
  for (auto& t : total.rows) {
    t.mae /= fits;
    t.wmae /= fits;
    t.div /= fits;
    t.curl /= fits;
    t.seconds /= fits;
  }
  total.best_index = 0;
  for (std::size_t k = 1; k < total.rows.size(); ++k)
    if (total.rows[k].wmae < total.rows[total.best_index].wmae) total.best_index = k;
  total.best = total.rows[total.best_index].candidate;
  write_cv_table(table, total);
  return total;
}

}  // namespace skytrack
