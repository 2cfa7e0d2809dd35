#include "skytrack/bemm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

#include "skytrack/kernels.hpp"

namespace skytrack {

namespace {

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double squeeze(double unit) { return std::clamp(kSqueeze + (1.0 - 2.0 * kSqueeze) * unit, kSqueeze, 1.0 - kSqueeze); }

void check_samples(std::span<const double> x) {
  if (x.empty()) throw InputError("no samples to fit");
  for (double v : x)
    if (!(v > 0.0 && v < 1.0)) throw DomainError("beta samples must lie strictly inside (0, 1)");
}

// Per-sample average of the component objective, written with sufficient statistics.
struct ComponentStats {
  double s1 = 0.0;  // mean of log x under the weights
  double s2 = 0.0;  // mean of log(1 - x)
  double weight = 0.0;

  double objective(double a, double b) const { return (a - 1.0) * s1 + (b - 1.0) * s2 - log_beta_fn(a, b); }

  Eigen::Vector2d gradient(double a, double b) const {
    const double common = boost::math::digamma(a + b);
    return {s1 - boost::math::digamma(a) + common, s2 - boost::math::digamma(b) + common};
  }
};

Eigen::Vector2d project(const Eigen::Vector2d& p) { return p.cwiseMax(kBetaParamFloor); }

void ascend(const ComponentStats& st, double& alpha, double& beta, const MStepOptions& opt) {
  Eigen::Vector2d theta(alpha, beta);
  double f = st.objective(theta.x(), theta.y());
  Eigen::Vector2d g = st.gradient(theta.x(), theta.y());
  if (!g.allFinite()) return;
  double step = 1.0;
  for (int it = 0; it < opt.max_steps; ++it) {
    if (g.norm() < opt.grad_tol) break;
    bool accepted = false;
    double t = step;
    for (int h = 0; h < opt.max_halvings; ++h, t *= 0.5) {
      const Eigen::Vector2d cand = project(theta + t * g);
      const Eigen::Vector2d moved = cand - theta;
      if (moved.squaredNorm() == 0.0) break;
      const double fc = st.objective(cand.x(), cand.y());
      if (!std::isfinite(fc) || fc < f + 1e-4 * g.dot(moved)) continue;
      const Eigen::Vector2d gc = st.gradient(cand.x(), cand.y());
      if (!gc.allFinite()) continue;
      // Barzilai-Borwein length for the next trial step.
      const double curvature = -moved.dot(gc - g);
      step = curvature > 0.0 ? moved.squaredNorm() / curvature : 2.0 * t;
      theta = cand;
      f = fc;
      g = gc;
      accepted = true;
      break;
    }
    if (!accepted) break;
  }
  alpha = theta.x();
  beta = theta.y();
}

}  // namespace

NormalizedTemps normalize_temps(const ThermalFrame& frame) {
  const Grid& t = frame.temps();
  NormalizedTemps out;
  out.lo = t.minCoeff();
  out.hi = t.maxCoeff();
  out.degenerate = !(out.hi > out.lo);
  if (out.degenerate) {
    out.values = Grid::Constant(t.rows(), t.cols(), 0.5);
    return out;
  }
  out.values = apply_normalization(out, t);
  return out;
}

Grid apply_normalization(const NormalizedTemps& reference, const Grid& temps) {
  if (reference.degenerate) return Grid::Constant(temps.rows(), temps.cols(), 0.5);
  const double span = reference.hi - reference.lo;
  return temps.unaryExpr([&](double v) { return squeeze((v - reference.lo) / span); });
}

double beta_logpdf(double x, double alpha, double beta) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("beta_logpdf: x must lie in (0, 1)");
  if (!(alpha > 0.0 && beta > 0.0)) throw DomainError("beta_logpdf: shape parameters must be positive");
  return (alpha - 1.0) * std::log(x) + (beta - 1.0) * std::log1p(-x) - log_beta_fn(alpha, beta);
}

RowMatrix e_step(std::span<const double> x, const BetaParams& params, int* underflow, Exec exec) {
  std::vector<double> log_prior(params.size());
  for (std::size_t c = 0; c < params.size(); ++c) log_prior[c] = std::log(params.prior[c]);
  RowMatrix gamma;
  const int bad = kernels::beta_responsibilities(x, log_prior, params.alpha, params.beta, gamma, exec);
  if (underflow) *underflow = bad;
  return gamma;
}

BetaParams m_step(std::span<const double> x, const RowMatrix& gamma, const BetaParams& params,
                  const MStepOptions& opt) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (gamma.rows() != n || gamma.cols() != static_cast<Eigen::Index>(params.size()))
    throw InputError("responsibility matrix does not match samples and components");
  BetaParams out = params;
  const std::size_t c_count = params.size();
  double total = 0.0;
  std::vector<ComponentStats> stats(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    auto& st = stats[c];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = gamma(i, static_cast<Eigen::Index>(c));
      st.weight += w;
      st.s1 += w * std::log(x[i]);
      st.s2 += w * std::log1p(-x[i]);
    }
    total += st.weight;
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    auto& st = stats[c];
    out.prior[c] = total > 0.0 ? st.weight / total : 1.0 / c_count;
    if (!(st.weight > 1e-12)) continue;  // nothing assigned: keep the shapes
    st.s1 /= st.weight;
    st.s2 /= st.weight;
    ascend(st, out.alpha[c], out.beta[c], opt);
  }
  return out;
}

double cdll(std::span<const double> x, const RowMatrix& gamma, const BetaParams& params) {
  double total = 0.0;
  for (std::size_t c = 0; c < params.size(); ++c) {
    const double lp = std::log(params.prior[c]);
    const double lb = log_beta_fn(params.alpha[c], params.beta[c]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      if (w == 0.0) continue;
      total += w * (lp + (params.alpha[c] - 1.0) * std::log(x[i]) + (params.beta[c] - 1.0) * std::log1p(-x[i]) - lb);
    }
  }
  return total;
}

double mixture_loglik(std::span<const double> x, const BetaParams& params) {
  double total = 0.0;
  std::vector<double> terms(params.size());
  for (double v : x) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < params.size(); ++c) {
      terms[c] = std::log(params.prior[c]) + beta_logpdf(v, params.alpha[c], params.beta[c]);
      peak = std::max(peak, terms[c]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - peak);
    total += peak + std::log(s);
  }
  return total;
}

BetaParams initial_params(std::span<const double> x, int clusters, std::uint64_t seed) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  BetaParams p;
  for (int c = 0; c < clusters; ++c) {
    const std::size_t lo = n * static_cast<std::size_t>(c) / static_cast<std::size_t>(clusters);
    const std::size_t hi = n * static_cast<std::size_t>(c + 1) / static_cast<std::size_t>(clusters);
    double m = 0.5, v = 1.0 / 12.0;
    if (hi > lo) {
      const double cnt = static_cast<double>(hi - lo);
      m = std::accumulate(sorted.begin() + lo, sorted.begin() + hi, 0.0) / cnt;
      double ss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) ss += (sorted[i] - m) * (sorted[i] - m);
      v = std::max(ss / cnt, 1e-6);
    }
    const double common = m * (1.0 - m) / v - 1.0;
    if (common > 0.0) {
      p.alpha.push_back(std::max(m * common, kBetaParamFloor));
      p.beta.push_back(std::max((1.0 - m) * common, kBetaParamFloor));
    } else {
      p.alpha.push_back(1.0);
      p.beta.push_back(1.0);
    }
    p.prior.push_back(static_cast<double>(hi - lo) / static_cast<double>(n));
  }
  // Coincident starts never separate under EM; nudge them apart reproducibly.
  if (clusters == 2 && std::abs(p.alpha[0] - p.alpha[1]) < 1e-12 && std::abs(p.beta[0] - p.beta[1]) < 1e-12) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.25);
    p.alpha[0] *= 1.0 - u(rng);
    p.beta[1] *= 1.0 - u(rng);
  }
  for (auto& pr : p.prior) pr = std::max(pr, 1e-12);
  const double s = std::accumulate(p.prior.begin(), p.prior.end(), 0.0);
  for (auto& pr : p.prior) pr /= s;
  return p;
}

BetaMixtureFit fit_em(std::span<const double> x, int clusters, std::uint64_t seed, int max_iters, double tol) {
  if (clusters != 1 && clusters != 2) throw InputError("beta mixture supports 1 or 2 components");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  check_samples(x);
  const auto n = static_cast<Eigen::Index>(x.size());

  BetaMixtureFit fit;
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (!(*mx - *mn > 1e-12)) {
    fit.n_clusters = 1;
    fit.degenerate = true;
    fit.params = BetaParams{{1.0}, {1.0}, {1.0}};
    fit.responsibilities = RowMatrix::Ones(n, 1);
    fit.converged = true;
    return fit;
  }

  fit.n_clusters = clusters;
  fit.params = initial_params(x, clusters, seed);
  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    int underflow = 0;
    RowMatrix gamma = clusters == 1 ? RowMatrix::Ones(n, 1) : e_step(x, fit.params, &underflow);
    fit.cdll_before.push_back(cdll(x, gamma, fit.params));
    fit.params = m_step(x, gamma, fit.params);
    const double q = cdll(x, gamma, fit.params);
    fit.cdll_trace.push_back(q);
    fit.loglik_trace.push_back(mixture_loglik(x, fit.params));
    fit.iterations = it + 1;
    fit.underflow = underflow;
    if (std::abs(q - previous) < tol) {
      fit.converged = true;
      break;
    }
    previous = q;
  }
  int underflow = 0;
  fit.responsibilities = clusters == 1 ? RowMatrix::Ones(n, 1) : e_step(x, fit.params, &underflow);
  fit.underflow = underflow;
  return fit;
}

BetaMixtureFit fit_em(const NormalizedTemps& temps, int clusters, std::uint64_t seed, int max_iters, double tol) {
  if (clusters != 1 && clusters != 2) throw InputError("beta mixture supports 1 or 2 components");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  if (temps.degenerate) {
    BetaMixtureFit fit;
    fit.degenerate = true;
    fit.params = BetaParams{{1.0}, {1.0}, {1.0}};
    fit.responsibilities = RowMatrix::Ones(temps.values.size(), 1);
    fit.converged = true;
    return fit;
  }
  return fit_em(std::span<const double>(temps.values.data(), static_cast<std::size_t>(temps.values.size())),
                clusters, seed, max_iters, tol);
}

double layer_mean_height(const Grid& gamma_c, const HeightField& heights, const CloudMask& mask) {
  const Grid& h = heights.heights;
  if (gamma_c.rows() != h.rows() || gamma_c.cols() != h.cols() || mask.bits.rows() != h.rows() ||
      mask.bits.cols() != h.cols())
    throw InputError("responsibility, height and mask grids differ in size");
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (mask.bits(i) == 0) continue;
    num += gamma_c(i) * h(i);
    den += gamma_c(i);
  }
  if (!(den > 0.0)) throw LayerEmptyError("no cloud pixel carries weight for this cluster");
  return num / den;
}

}  // namespace skytrack
