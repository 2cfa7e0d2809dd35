#include "skytrack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "skytrack/bemm.hpp"
#include "skytrack/layers.hpp"

namespace skytrack {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
  if (layers != 1 && layers != 2) throw InputError("layers must be 1 or 2");
  if (!(tau_sel > 0.0 && tau_sel < 1.0)) throw InputError("tau_sel must lie in (0, 1)");
  if (pool_depth < 1) throw InputError("ell must be >= 1");
  if (n_star < layers) throw InputError("n_star must be at least the layer count");
  wlk.validate();
  height.validate();
  if (!(diag_fov > 0.0 && diag_fov < std::numbers::pi)) throw InputError("diag_fov must lie in (0, 180) degrees");
  params.kernel.validate();
  if (!(params.c_reg > 0.0) || !(params.epsilon >= 0.0)) throw InputError("C must be > 0 and epsilon >= 0");
  if (!(svr_tol > 0.0)) throw InputError("svr_tol must be positive");
  if (!(fc.fc_tol > 0.0) || !(fc.rho0 > 0.0) || !(fc.rho_factor > 1.0) || !(fc.rho_max >= fc.rho0))
    throw InputError("invalid penalty schedule");
  if (!(coordinate_scale >= 0.0)) throw InputError("coordinate_scale must be >= 0");
  if (bemm_max_iters < 1 || icm_max_iters < 1 || icm_restarts < 1) throw InputError("iteration limits must be >= 1");
  if (cv) cv->validate();
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw InputError("config key " + key + ": not a number: '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw InputError("config key " + key + ": not an integer: '" + v + "'");
  return static_cast<long long>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InputError("config key " + key + ": not a boolean: '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

PipelineConfig config_from(const KeyValues& kv, const fs::path& base) {
  PipelineConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "layers") c.layers = static_cast<int>(to_int(key, v));
    else if (key == "delta") c.wlk.vector_scale = to_double(key, v);
    else if (key == "tau_sel") c.tau_sel = to_double(key, v);
    else if (key == "ell") c.pool_depth = static_cast<int>(to_int(key, v));
    else if (key == "pool_inclusive") c.pool_inclusive = to_bool(key, v);
    else if (key == "n_star") c.n_star = static_cast<int>(to_int(key, v));
    else if (key == "wlk_window") c.wlk.window_size = static_cast<int>(to_int(key, v));
    else if (key == "wlk_tau") c.wlk.reg_tau = to_double(key, v);
    else if (key == "wlk_sigma") c.wlk.kernel_sigma = to_double(key, v);
    else if (key == "frame_rate") c.wlk.frame_rate = to_double(key, v);
    else if (key == "wlk_taper") c.wlk.taper = to_bool(key, v);
    else if (key == "lapse_rate") c.height.lapse_rate = to_double(key, v);
    else if (key == "height_floor") c.height.height_floor = to_double(key, v);
    else if (key == "height_ceiling") c.height.height_ceiling = to_double(key, v);
    else if (key == "diag_fov_deg") c.diag_fov = to_double(key, v) * std::numbers::pi / 180.0;
    else if (key == "geometry_path") c.geometry = resolve(base, v);
    else if (key == "solver") c.solver = parse_solver_mode(v);
    else if (key == "kernel") c.params.kernel.kind = parse_kernel_kind(v);
    else if (key == "C") c.params.c_reg = to_double(key, v);
    else if (key == "epsilon") c.params.epsilon = to_double(key, v);
    else if (key == "gamma") c.params.kernel.gamma = to_double(key, v);
    else if (key == "beta") c.params.kernel.coef0 = to_double(key, v);
    else if (key == "degree") c.params.kernel.degree = static_cast<int>(to_int(key, v));
    else if (key == "svr_tol") c.svr_tol = to_double(key, v);
    else if (key == "fc_tol") c.fc.fc_tol = to_double(key, v);
    else if (key == "rho0") c.fc.rho0 = to_double(key, v);
    else if (key == "rho_factor") c.fc.rho_factor = to_double(key, v);
    else if (key == "rho_max") c.fc.rho_max = to_double(key, v);
    else if (key == "cv_grid") c.cv = cv_spec_from(read_key_values(resolve(base, v)));
    else if (key == "coordinate_scale") c.coordinate_scale = to_double(key, v);
    else if (key == "sample_rule") {
      if (v == "upper") c.sample_rule = CdfRule::upper;
      else if (v == "nearest") c.sample_rule = CdfRule::nearest;
      else throw InputError("sample_rule must be upper or nearest");
    } else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "bemm_mask_only") c.bemm_mask_only = to_bool(key, v);
    else if (key == "bemm_max_iters") c.bemm_max_iters = static_cast<int>(to_int(key, v));
    else if (key == "bemm_tol") c.bemm_tol = to_double(key, v);
    else if (key == "icm_max_iters") c.icm_max_iters = static_cast<int>(to_int(key, v));
    else if (key == "icm_restarts") c.icm_restarts = static_cast<int>(to_int(key, v));
    else throw InputError("unknown config key: " + key);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) { return config_from(read_key_values(path), path.parent_path()); }

CvSpec cv_spec_from(const KeyValues& kv) {
  CvSpec s;
  bool fixed = false;
  for (const auto& [key, v] : kv) {
    if (key == "kernel") s.kind = parse_kernel_kind(v);
    else if (key == "solver") s.solver = parse_solver_mode(v);
    else if (key == "C") s.c_grid = parse_number_list(v);
    else if (key == "epsilon") s.epsilon_grid = parse_number_list(v);
    else if (key == "gamma") s.gamma_grid = parse_number_list(v);
    else if (key == "beta") s.beta_grid = parse_number_list(v);
    else if (key == "degree") {
      s.degree_grid.clear();
      for (double d : parse_number_list(v)) {
        if (d != std::floor(d)) throw InputError("degree must be an integer");
        s.degree_grid.push_back(static_cast<int>(d));
      }
    } else if (key == "train_fraction") s.train_fraction = to_double(key, v);
    else if (key == "folds") s.folds = static_cast<int>(to_int(key, v));
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "fixed") fixed = to_bool(key, v);
    else throw InputError("unknown grid key: " + key);
  }
  if (fixed) {
    Candidate c;
    c.kernel.kind = s.kind;
    c.kernel.gamma = s.gamma_grid.front();
    c.kernel.coef0 = s.beta_grid.front();
    c.kernel.degree = s.degree_grid.front();
    c.c_reg = s.c_grid.front();
    c.epsilon = s.epsilon_grid.front();
    s.fixed = c;
  }
  s.validate();
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over a Weyl step.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Pipeline::Pipeline(PipelineConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  pool_.depth = cfg_.pool_depth;
  pool_.inclusive = cfg_.pool_inclusive;
}

const FlowConstraintOps& Pipeline::ops_for(int rows, int cols) {
  if (!ops_ || ops_->rows != rows || ops_->cols != cols) {
    ops_ = FlowConstraintOps::build(rows, cols);
    const double scale = cfg_.coordinate_scale > 0.0 ? cfg_.coordinate_scale : 1.0 / (std::max(rows, cols) - 1);
    grid_ = pixel_coordinates(rows, cols, scale);
  }
  return *ops_;
}

std::optional<FrameResult> Pipeline::step(const ManifestEntry& entry, std::int64_t index) {
  FrameResult res;
  res.index = index;
  res.timestamp = entry.timestamp;
  res.frame_path = entry.frame_path;
  std::optional<ThermalFrame> frame;
  CloudMask mask;
  try {
    frame.emplace(load_frame(entry, index));
    mask = load_mask(entry, frame->rows(), frame->cols());
  } catch (const std::exception& e) {
    // An unreadable frame breaks the pair; the next good frame primes again.
    res.message = e.what();
    prev_.reset();
    return res;
  }
  if (!prev_) {
    prev_ = std::move(frame);
    return std::nullopt;
  }
  try {
    FrameResult out = process(*frame, mask, index);
    out.index = index;
    out.timestamp = entry.timestamp;
    out.frame_path = entry.frame_path;
    res = std::move(out);
  } catch (const std::exception& e) {
    res.ok = false;
    res.message = e.what();
  }
  prev_ = std::move(frame);
  return res;
}

FrameResult Pipeline::process(const ThermalFrame& frame, const CloudMask& mask, std::int64_t index) {
  const ThermalFrame& prev = *prev_;
  if (prev.rows() != frame.rows() || prev.cols() != frame.cols())
    throw InputError("frame size differs from the previous frame");
  const int rows = static_cast<int>(frame.rows()), cols = static_cast<int>(frame.cols());
  const std::uint64_t fseed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(index));
  FrameResult res;

  // Mixture over normalized temperatures; responsibilities for every pixel.
  const NormalizedTemps temps = normalize_temps(frame);
  const std::span<const double> all(temps.values.data(), static_cast<std::size_t>(temps.values.size()));
  std::vector<double> fit_samples;
  if (cfg_.bemm_mask_only) {
    for (Eigen::Index i = 0; i < temps.values.size(); ++i)
      if (mask.bits(i)) fit_samples.push_back(temps.values(i));
  }
  if (fit_samples.size() < 2) fit_samples.assign(all.begin(), all.end());
  const BetaMixtureFit mix = fit_em(fit_samples, cfg_.layers, derive_seed(fseed, 1), cfg_.bemm_max_iters, cfg_.bemm_tol);
  const RowMatrix resp = e_step(all, mix.params);
  const int n_comp = static_cast<int>(resp.cols());

  const HeightField heights = height_map(frame, cfg_.height);
  std::vector<Grid> gammas;
  std::vector<double> comp_height;
  for (int c = 0; c < n_comp; ++c) {
    const Eigen::VectorXd col = resp.col(c);
    const Grid g = Eigen::Map<const Grid>(col.data(), rows, cols);
    comp_height.push_back(layer_mean_height(g, heights, mask));
    // Clear-sky pixels belong to no layer.
    gammas.push_back(g * mask.bits.cast<double>());
  }

  const PixelGeometry geom = cfg_.geometry ? read_tgeo(*cfg_.geometry) : pixel_geometry(frame, cfg_.diag_fov);
  if (geom.dx.rows() != rows || geom.dx.cols() != cols) throw InputError("geometry grid does not match the frame");

  // Per-component optical flow, combined into one metric vector per pixel.
  const Derivatives deriv = derivatives(prev, frame, cfg_.wlk.kernel_sigma);
  std::vector<LayerFlow> flows;
  for (const auto& g : gammas) flows.push_back(wlk(deriv, g, cfg_.wlk));
  const MetricFlow metric = to_metric(flows, gammas, comp_height, geom, cfg_.wlk);

  // High-change cloud pixels with full-confidence windows feed the pool.
  const CloudMask selected = threshold_select(change_rank(prev, frame), cfg_.tau_sel);
  std::vector<PoolEntry> fresh;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!selected.bits(r, c) || !mask.bits(r, c)) continue;
      bool low = false;
      for (const auto& f : flows) low = low || f.low_confidence(r, c);
      if (low) continue;
      PoolEntry e;
      e.x = c;
      e.y = r;
      e.u = metric.u(r, c);
      e.v = metric.v(r, c);
      e.resp = {gammas[0](r, c), n_comp > 1 ? gammas[1](r, c) : 0.0};
      fresh.push_back(e);
    }
  pool_ = push_frame(pool_, fresh);
  res.selected = fresh.size();
  res.pool_size = pool_.size();

  // Layer inference, upper layer first.
  LayerModel model;
  model.velocity = icm_velocity(pool_, cfg_.layers, derive_seed(fseed, 2), cfg_.icm_max_iters, cfg_.icm_restarts);
  model.height = icm_height(heights, mask, metric.u, metric.v, model.velocity, cfg_.icm_max_iters);
  model = order_layers(std::move(model));
  res.collapsed = model.velocity.collapsed;
  res.layer_tie = model.tie;
  const int n_layers = model.velocity.layers;

  res.samples = subsample(pool_, model.velocity, cfg_.n_star, derive_seed(fseed, 3), cfg_.sample_rule);

  // Mixture components sorted by height so they line up with the ordered layers.
  std::vector<int> by_height(static_cast<std::size_t>(n_comp));
  std::iota(by_height.begin(), by_height.end(), 0);
  std::stable_sort(by_height.begin(), by_height.end(),
                   [&](int a, int b) { return comp_height[static_cast<std::size_t>(a)] > comp_height[static_cast<std::size_t>(b)]; });

  const FlowConstraintOps& ops = ops_for(rows, cols);
  const double scale = cfg_.coordinate_scale > 0.0 ? cfg_.coordinate_scale : 1.0 / (std::max(rows, cols) - 1);
  const auto n = res.samples.size();
  CvData data;
  data.inputs = res.samples.coords * scale;
  data.targets.resize(2 * n);
  data.targets << res.samples.velocities.col(0), res.samples.velocities.col(1);
  data.ops = ops;
  data.grid = grid_;
  data.fc = cfg_.fc;
  data.tol = cfg_.svr_tol;

  // Layers are solved concurrently; the hook sees them in order first.
  std::vector<CvData> per_layer(static_cast<std::size_t>(n_layers), data);
  for (int c = 0; c < n_layers; ++c) {
    per_layer[static_cast<std::size_t>(c)].weights = res.samples.posteriors.col(c);
    if (on_layer_data) on_layer_data(index, c, per_layer[static_cast<std::size_t>(c)]);
  }
  std::vector<Candidate> params(static_cast<std::size_t>(n_layers), cfg_.params);
  std::vector<Fitted> fits(static_cast<std::size_t>(n_layers));
  std::vector<std::string> errors(static_cast<std::size_t>(n_layers));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n_layers; ++c) {
    const auto k = static_cast<std::size_t>(c);
    try {
      if (cfg_.cv) {
        CvSpec spec = *cfg_.cv;
        spec.solver = cfg_.solver;
        spec.seed = derive_seed(fseed, 10 + static_cast<std::uint64_t>(c));
        params[k] = cross_validate(per_layer[k], spec).best;
      }
      fits[k] = fit_and_predict(per_layer[k], params[k], cfg_.solver, grid_);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw InputError(e);

  for (int c = 0; c < n_layers; ++c) {
    const Fitted& fit = fits[static_cast<std::size_t>(c)];
    LayerResult lr;
    lr.layer = c;
    lr.params = params[static_cast<std::size_t>(c)];
    lr.rho = fit.rho;
    lr.kkt_residual = fit.kkt_residual;
    lr.iterations = fit.iterations;
    lr.converged = fit.converged;
    lr.support_vectors = fit.support_vectors;

    lr.cloud_height = model.height.cloud_height[static_cast<std::size_t>(c)];
    lr.bemm_height = comp_height[static_cast<std::size_t>(by_height[static_cast<std::size_t>(std::min(c, n_comp - 1))])];
    lr.model_mean = model.velocity.dist[static_cast<std::size_t>(c)].mean;

    lr.field.u = Eigen::Map<const Grid>(fit.u.data(), rows, cols);
    lr.field.v = Eigen::Map<const Grid>(fit.v.data(), rows, cols);
    lr.field.height = lr.cloud_height;
    lr.residual = div_curl(lr.field, ops).scalars;
    lr.stream = stream_potential(lr.field, geom.dx, geom.dy);

    lr.mean_velocity = Vec2(lr.field.u.mean(), lr.field.v.mean());
    lr.speed = (lr.field.u.square() + lr.field.v.square()).sqrt().mean();
    lr.direction = std::atan2(lr.mean_velocity.y(), lr.mean_velocity.x());
    res.layers.push_back(std::move(lr));
  }
  res.ok = true;
  return res;
}

std::string field_file_name(std::int64_t frame, int layer) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "fields/frame_%04lld_layer_%d.tfld", static_cast<long long>(frame), layer);
  return buf;
}

std::string samples_file_name(std::int64_t frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "samples/frame_%04lld.csv", static_cast<long long>(frame));
  return buf;
}

namespace {

void write_samples(const fs::path& path, const SampleSet& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample,drawn_for,x,y,u,v,z0,z1\n";
  char buf[256];
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z1 = s.posteriors.cols() > 1 ? s.posteriors(i, 1) : 0.0;
    std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(i),
                  s.drawn_for[static_cast<std::size_t>(i)], s.coords(i, 0), s.coords(i, 1), s.velocities(i, 0),
                  s.velocities(i, 1), s.posteriors(i, 0), z1);
    out << buf;
  }
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<FrameResult>& frames, const fs::path& base) {
  out << "frame,timestamp,status,layers,layer,bemm_height_m,cloud_height_m,mean_u,mean_v,speed,direction_deg,"
         "model_u,model_v,div,curl,kernel,C,epsilon,rho,kkt,iterations,converged,support_vectors,samples,pool,"
         "selected,field_file,samples_file,frame_file\n";
  char buf[1024];
  for (const auto& f : frames) {
    const std::string frame_file =
        (base.empty() || f.frame_path.empty() ? f.frame_path : fs::proximate(f.frame_path, base)).generic_string();
    if (!f.ok) {
      std::snprintf(buf, sizeof buf, "%lld,%.9g,failed,0,-1,,,,,,,,,,,,,,,,,,,,,,,,%s\n",
                    static_cast<long long>(f.index), f.timestamp, frame_file.c_str());
      out << buf;
      continue;
    }
    for (const auto& l : f.layers) {
      std::snprintf(buf, sizeof buf,
                    "%lld,%.9g,ok,%zu,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%.9g,%.9g,%.9g,%.9g,%ld,"
                    "%d,%d,%lld,%zu,%zu,%s,%s,%s\n",
                    static_cast<long long>(f.index), f.timestamp, f.layers.size(), l.layer, l.bemm_height,
                    l.cloud_height, l.mean_velocity.x(), l.mean_velocity.y(), l.speed,
                    l.direction * 180.0 / std::numbers::pi, l.model_mean.x(), l.model_mean.y(), l.residual.s_v,
                    l.residual.s_d, to_string(l.params.kernel.kind).c_str(), l.params.c_reg, l.params.epsilon, l.rho,
                    l.kkt_residual, l.iterations, l.converged ? 1 : 0, l.support_vectors,
                    static_cast<long long>(f.samples.size()), f.pool_size, f.selected,
                    field_file_name(f.index, l.layer).c_str(), samples_file_name(f.index).c_str(), frame_file.c_str());
      out << buf;
    }
  }
}

std::vector<FrameResult> run_pipeline(const fs::path& manifest, const PipelineConfig& config,
                                      const RunOptions& options) {
  const auto entries = read_manifest(manifest);
  if (entries.size() < 2) throw InputError("the manifest needs at least two frames");
  Pipeline pipeline(config);

  std::ofstream log_file;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir / "fields");
    fs::create_directories(*options.out_dir / "samples");
    log_file.open(*options.out_dir / "run.log");
    if (!log_file) throw IoError("cannot write " + (*options.out_dir / "run.log").string());
  }
  auto log = [&](const std::string& line) {
    if (log_file.is_open()) log_file << line << '\n';
    if (options.log) *options.log << line << '\n';
  };

  std::vector<FrameResult> frames;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto index = static_cast<std::int64_t>(i);
    auto r = pipeline.step(entries[i], index);
    if (!r) {
      log("frame " + std::to_string(i) + ": primed");
      continue;
    }
    if (!r->ok) {
      log("frame " + std::to_string(i) + ": skipped: " + r->message);
    } else {
      std::string line = "frame " + std::to_string(i) + ": ok, " + std::to_string(r->layers.size()) + " layer(s)";
      if (r->collapsed) line += ", collapsed to one layer";
      log(line);
      if (options.out_dir) {
        for (const auto& l : r->layers)
          write_tfld(*options.out_dir / field_file_name(index, l.layer),
                     FieldGrids{l.field.u, l.field.v, l.stream.phi, l.stream.psi});
        write_samples(*options.out_dir / samples_file_name(index), r->samples);
      }
    }
    frames.push_back(std::move(*r));
  }
  if (options.out_dir) {
    std::ofstream csv(*options.out_dir / "results.csv");
    if (!csv) throw IoError("cannot write results.csv");
    write_results_csv(csv, frames, *options.out_dir);
    if (!csv) throw IoError("failed writing results.csv");
  }
  return frames;
}

}  // namespace skytrack
