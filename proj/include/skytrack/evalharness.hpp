#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/kernel_spec.hpp"
#include "skytrack/wsvr.hpp"

namespace skytrack {

struct ErrorPair {
  double mae = 0.0;
  double wmae = 0.0;
};

/// MAE = mean |e| and WMAE = sum z|e| / sum z with e = pred - truth.
ErrorPair mae_wmae(std::span<const double> pred, std::span<const double> truth, std::span<const double> weights);

/// One layer's height (m), speed (m/s) and direction (radians, (-pi, pi]).
struct LayerLabel {
  double height = 0.0;
  double speed = 0.0;
  double direction = 0.0;
};

struct FrameLabels {
  std::vector<LayerLabel> layers;
};

struct Mape {
  double height = 0.0;
  double speed = 0.0;
  double direction = 0.0;  // wrapped angular error as a percentage of pi
  double combined = 0.0;   // mean over the quantities that were not skipped
  bool height_skipped = false;
  bool speed_skipped = false;
};

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Percentage errors of one layer's estimate. A zero height or speed label
/// skips that quantity (its value stays 0 and the flag is set).
Mape mape_labels(const LayerLabel& estimate, const LayerLabel& label);

/// 1/2 mean(m_k) + 1/2 mean |m_k - m_{k-1}|. With a single value the second
/// term is 0 and `single_frame` is set.
double selection_score(std::span<const double> mape, bool* single_frame = nullptr);

enum class SolverMode { single, mo, mo_fc };

SolverMode parse_solver_mode(std::string_view name);
std::string to_string(SolverMode mode);

struct Candidate {
  KernelSpec kernel;
  double c_reg = 38.50;
  double epsilon = 0.19;
};

struct CvSpec {
  KernelKind kind = KernelKind::linear;
  std::vector<double> c_grid{38.50};
  std::vector<double> epsilon_grid{0.19};
  std::vector<double> gamma_grid{1.0};
  std::vector<double> beta_grid{0.0};  // polynomial coef0
  std::vector<int> degree_grid{2};
  double train_fraction = 0.75;
  int folds = 1;  // independent seeded splits, WMAE averaged over them
  std::uint64_t seed = 0;
  SolverMode solver = SolverMode::mo;
  std::optional<Candidate> fixed;  // replay these parameters, no search

  // Throws InputError on empty grids or an out-of-range split.
  void validate() const;
};

/// Cartesian product in grid order: C outermost, then epsilon, gamma, beta, degree.
std::vector<Candidate> candidates(const CvSpec& spec);

/// Samples to cross-validate on: N x 2 inputs, 2N targets [u; v], N weights.
struct CvData {
  RowMatrix inputs;
  Eigen::VectorXd targets;
  Eigen::VectorXd weights;
  // Needed for SolverMode::mo_fc, optional otherwise; when present the
  // residuals of the fitted field on this grid go into the table.
  std::optional<FlowConstraintOps> ops;
  RowMatrix grid;
  FcOptions fc;
  double tol = 1e-7;  // solver stopping tolerance
};

struct CvRow {
  Candidate candidate;
  double mae = 0.0;
  double wmae = 0.0;
  double div = 0.0;   // s_v on the grid, 0 without one
  double curl = 0.0;  // s_d on the grid
  double seconds = 0.0;
};

struct CvResult {
  Candidate best;
  std::size_t best_index = 0;
  std::vector<CvRow> rows;
  bool searched = true;  // false in fixed mode
};

/// Held-out split: `fraction` of the indices for training, the rest for
/// testing, both non-empty and sorted.
struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};
Split holdout_split(Eigen::Index n, double fraction, std::uint64_t seed);

/// Fits one candidate with the given solver mode and evaluates both outputs
/// at `query`.
struct Fitted {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  ConstraintResidual residual;  // on data.grid when a grid is present
  long iterations = 0;          // summed over both single-output solves or the penalty schedule
  double kkt_residual = 0.0;    // worst over the solves
  double rho = 0.0;             // final penalty, flow-constrained mode only
  bool converged = true;
  int support_vectors = 0;
};
Fitted fit_and_predict(const CvData& train, const Candidate& c, SolverMode mode, const RowMatrix& query);

/// Grid search scored by held-out WMAE over both components. Ties keep the
/// earliest candidate in grid order. Candidates run concurrently; the result
/// does not depend on the thread count.
CvResult cross_validate(const CvData& data, const CvSpec& spec);

/// kernel,C,epsilon,gamma,beta,d,MAE,WMAE,div,curl,seconds
void write_cv_table(std::ostream& out, const CvResult& result);

}  // namespace skytrack
