#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/imaging.hpp"

namespace skytrack {

inline constexpr double kSqueeze = 1e-4;
inline constexpr double kBetaParamFloor = 1e-6;

struct NormalizedTemps {
  Grid values;  // strictly inside (0, 1)
  bool degenerate = false;
  double lo = 0.0;  // affine map used: (t - lo) / (hi - lo), then squeezed
  double hi = 0.0;
};

/// Min-max normalization over the frame followed by the squeeze into [eta, 1 - eta].
NormalizedTemps normalize_temps(const ThermalFrame& frame);

/// Applies the affine map of `reference` to other temperatures, clamping to the squeezed range.
Grid apply_normalization(const NormalizedTemps& reference, const Grid& temps);

/// log density of Be(alpha, beta) at x. Throws DomainError outside (0, 1).
double beta_logpdf(double x, double alpha, double beta);

struct BetaParams {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> prior;

  std::size_t size() const { return alpha.size(); }
  double mean(std::size_t c) const { return alpha[c] / (alpha[c] + beta[c]); }
};

/// Per-sample responsibilities (n x C), normalized in log-space. Samples whose
/// component densities all underflow get uniform rows; their count is written
/// to `underflow` when given.
RowMatrix e_step(std::span<const double> x, const BetaParams& params, int* underflow = nullptr,
                 Exec exec = Exec::parallel);

struct MStepOptions {
  int max_steps = 2000;    // gradient steps per component
  double grad_tol = 1e-12; // on the per-sample gradient norm
  int max_halvings = 60;
};

/// Prior update in closed form; (alpha, beta) by backtracking gradient ascent
/// on the complete-data log-likelihood with the responsibilities held fixed.
BetaParams m_step(std::span<const double> x, const RowMatrix& gamma, const BetaParams& params,
                  const MStepOptions& opt = {});

/// Complete-data log-likelihood sum_i sum_c gamma_ic (log pi_c + log f(x_i | c)).
double cdll(std::span<const double> x, const RowMatrix& gamma, const BetaParams& params);

/// Observed-data log-likelihood sum_i log sum_c pi_c f(x_i | c).
double mixture_loglik(std::span<const double> x, const BetaParams& params);

struct BetaMixtureFit {
  int n_clusters = 1;
  BetaParams params;
  RowMatrix responsibilities;        // n x C, rows in sample order
  // Complete-data log-likelihood around every M step, evaluated with that
  // iteration's responsibilities: cdll_before[t] -> cdll_trace[t]. Each M step
  // only accepts non-decreasing moves. Across iterations the responsibilities
  // change, so the monotone cross-iteration quantity is loglik_trace.
  std::vector<double> cdll_before;
  std::vector<double> cdll_trace;
  std::vector<double> loglik_trace;  // observed-data log-likelihood after every M step
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  // single-component fallback was used
  int underflow = 0;
};

/// Method-of-moments start from a quantile split of the sorted samples.
BetaParams initial_params(std::span<const double> x, int clusters, std::uint64_t seed);

BetaMixtureFit fit_em(std::span<const double> x, int clusters, std::uint64_t seed = 0,
                      int max_iters = 200, double tol = 1e-8);
BetaMixtureFit fit_em(const NormalizedTemps& temps, int clusters, std::uint64_t seed = 0,
                      int max_iters = 200, double tol = 1e-8);

/// Responsibility-weighted mean height over cloud pixels. `gamma_c` is the
/// M x N responsibility grid of one cluster. Throws LayerEmptyError when the
/// mask is empty or carries no weight.
double layer_mean_height(const Grid& gamma_c, const HeightField& heights, const CloudMask& mask);

}  // namespace skytrack
