#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "skytrack/evalharness.hpp"
#include "skytrack/flowfield.hpp"
#include "skytrack/imaging.hpp"
#include "skytrack/io.hpp"
#include "skytrack/motionpool.hpp"
#include "skytrack/optflow.hpp"
#include "skytrack/subsample.hpp"
#include "skytrack/wsvr.hpp"

namespace skytrack {

struct PipelineConfig {
  int layers = 1;
  double tau_sel = 0.95;
  int pool_depth = 6;
  bool pool_inclusive = false;
  int n_star = 200;
  WlkConfig wlk;  // window 16, tau 1e-8, sigma 1, delta 2.29
  HeightModel height;
  double diag_fov = 1.0471975511965976;          // 60 degrees
  std::optional<std::filesystem::path> geometry;  // TGEO file replacing the pinhole model

  SolverMode solver = SolverMode::mo_fc;
  Candidate params{KernelSpec{}, 38.50, 0.19};
  double svr_tol = 1e-7;
  FcOptions fc;
  std::optional<CvSpec> cv;  // per-frame cross-validation instead of fixed params

  double coordinate_scale = 0.0;  // 0 picks 1 / (max(rows, cols) - 1)
  CdfRule sample_rule = CdfRule::upper;
  std::uint64_t seed = 0;

  bool bemm_mask_only = true;  // fit the mixture on cloud pixels only
  int bemm_max_iters = 200;
  double bemm_tol = 1e-8;
  int icm_max_iters = 100;
  int icm_restarts = 8;

  // Throws InputError on out-of-range values.
  void validate() const;
};

/// Keys are the field names above (`delta`, `wlk_window`, `wlk_tau`,
/// `wlk_sigma`, `frame_rate`, `wlk_taper`, `lapse_rate`, `height_floor`,
/// `height_ceiling`, `diag_fov_deg`, `geometry_path`, `kernel`, `C`,
/// `epsilon`, `gamma`, `beta`, `degree`, `fc_tol`, `rho0`, `rho_factor`,
/// `rho_max`, `cv_grid` for the rest). Unknown keys are InputErrors. Relative
/// paths are resolved against `base`.
PipelineConfig config_from(const KeyValues& kv, const std::filesystem::path& base = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Grid file for cross-validation: `kernel`, `solver`, and comma lists `C`,
/// `epsilon`, `gamma`, `beta`, `degree`; optional `train_fraction`, `folds`,
/// `seed`; `fixed = true` replays the first entry of every list.
CvSpec cv_spec_from(const KeyValues& kv);

struct LayerResult {
  int layer = 0;                // 0 is the upper layer
  double bemm_height = 0.0;     // responsibility-weighted mean height of the matching mixture component
  double cloud_height = 0.0;    // mean height of the cloud pixels assigned to the layer
  Vec2 mean_velocity{0, 0};     // over the extrapolated grid, m/s
  double speed = 0.0;           // mean magnitude over the grid
  double direction = 0.0;       // atan2 of the mean velocity, radians
  Vec2 model_mean{0, 0};        // velocity Gaussian mean of the layer
  ConstraintResidual residual;  // div/curl scalars of the extrapolated grid
  Candidate params;
  double rho = 0.0;
  double kkt_residual = 0.0;
  long iterations = 0;
  bool converged = true;
  int support_vectors = 0;
  GridField field;
  StreamFunction stream;
};

struct FrameResult {
  std::int64_t index = 0;
  double timestamp = 0.0;
  bool ok = false;
  std::string message;  // failure reason
  std::vector<LayerResult> layers;
  std::size_t pool_size = 0;
  std::size_t selected = 0;
  bool collapsed = false;  // two layers requested, one found
  bool layer_tie = false;
  SampleSet samples;
  std::filesystem::path frame_path;
};

/// Streaming per-frame processor. The first frame (and the first frame after
/// an unreadable one) only primes the previous-frame slot.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  /// nullopt while priming; otherwise a result, failed frames included.
  std::optional<FrameResult> step(const ManifestEntry& entry, std::int64_t index);

  /// Called with each layer's weighted samples before solving.
  std::function<void(std::int64_t frame, int layer, const CvData& data)> on_layer_data;

  const VectorPool& pool() const { return pool_; }

 private:
  FrameResult process(const ThermalFrame& frame, const CloudMask& mask, std::int64_t index);
  const FlowConstraintOps& ops_for(int rows, int cols);

  PipelineConfig cfg_;
  std::optional<ThermalFrame> prev_;
  VectorPool pool_;
  std::optional<FlowConstraintOps> ops_;
  RowMatrix grid_;
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // nothing is written without one
  std::ostream* log = nullptr;
};

/// Processes every manifest frame in order. With an output directory writes
/// results.csv, fields/frame_NNNN_layer_L.tfld, samples/frame_NNNN.csv and
/// run.log. Needs at least two frames.
std::vector<FrameResult> run_pipeline(const std::filesystem::path& manifest, const PipelineConfig& config,
                                      const RunOptions& options = {});

/// One row per frame per layer; failed frames get one row with status
/// `failed`. Field and sample paths are relative to the output directory;
/// frame paths are made relative to `base` when one is given.
void write_results_csv(std::ostream& out, const std::vector<FrameResult>& frames,
                       const std::filesystem::path& base = {});

std::string field_file_name(std::int64_t frame, int layer);
std::string samples_file_name(std::int64_t frame);

/// Mixes a run seed and a stream index into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace skytrack
