#include "skytrack/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

namespace skytrack {

ErrorPair mae_wmae(std::span<const double> pred, std::span<const double> truth, std::span<const double> weights) {
  if (pred.size() != truth.size() || pred.size() != weights.size()) throw InputError("mae_wmae: length mismatch");
  if (pred.empty()) throw InputError("mae_wmae: no samples");
  double sum = 0.0, wsum = 0.0, z = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw InputError("mae_wmae: weights must be non-negative");
    const double e = std::abs(pred[i] - truth[i]);
    sum += e;
    wsum += weights[i] * e;
    z += weights[i];
  }
  if (z == 0.0) throw InputError("mae_wmae: all weights are zero");
  return {sum / static_cast<double>(pred.size()), wsum / z};
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r > std::numbers::pi) r -= two_pi;
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

Mape mape_labels(const LayerLabel& estimate, const LayerLabel& label) {
  Mape m;
  double total = 0.0;
  int used = 1;
  if (label.height == 0.0) {
    m.height_skipped = true;
  } else {
    m.height = std::abs(estimate.height - label.height) / std::abs(label.height) * 100.0;
    total += m.height;
    ++used;
  }
  if (label.speed == 0.0) {
    m.speed_skipped = true;
  } else {
    m.speed = std::abs(estimate.speed - label.speed) / std::abs(label.speed) * 100.0;
    total += m.speed;
    ++used;
  }
  m.direction = std::abs(wrap_angle(estimate.direction - label.direction)) / std::numbers::pi * 100.0;
  total += m.direction;
  m.combined = total / used;
  return m;
}

double selection_score(std::span<const double> mape, bool* single_frame) {
  if (mape.empty()) throw InputError("selection_score: no frames");
  const double mean = std::accumulate(mape.begin(), mape.end(), 0.0) / static_cast<double>(mape.size());
  double diff = 0.0;
  for (std::size_t k = 1; k < mape.size(); ++k) diff += std::abs(mape[k] - mape[k - 1]);
  if (single_frame) *single_frame = mape.size() == 1;
  if (mape.size() > 1) diff /= static_cast<double>(mape.size() - 1);
  return 0.5 * mean + 0.5 * diff;
}

SolverMode parse_solver_mode(std::string_view name) {
  if (name == "single") return SolverMode::single;
  if (name == "mo") return SolverMode::mo;
  if (name == "mo_fc") return SolverMode::mo_fc;
  throw InputError("unknown solver mode: " + std::string(name));
}

std::string to_string(SolverMode mode) {
  switch (mode) {
    case SolverMode::single: return "single";
    case SolverMode::mo: return "mo";
    case SolverMode::mo_fc: return "mo_fc";
  }
  return "?";
}

void CvSpec::validate() const {
  if (!fixed && (c_grid.empty() || epsilon_grid.empty() || gamma_grid.empty() || beta_grid.empty() ||
                 degree_grid.empty()))
    throw InputError("cross-validation grid is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train fraction must lie in (0, 1)");
  if (folds < 1) throw InputError("folds must be >= 1");
  for (const auto& c : candidates(*this)) {
    c.kernel.validate();
    if (!(c.c_reg > 0.0) || !(c.epsilon >= 0.0)) throw InputError("C must be > 0 and epsilon >= 0");
  }
}

std::vector<Candidate> candidates(const CvSpec& spec) {
  if (spec.fixed) return {*spec.fixed};
  std::vector<Candidate> out;
  for (double c : spec.c_grid)
    for (double e : spec.epsilon_grid)
      for (double g : spec.gamma_grid)
        for (double b : spec.beta_grid)
          for (int d : spec.degree_grid) {
            Candidate cand;
            cand.kernel.kind = spec.kind;
            cand.kernel.gamma = g;
            cand.kernel.coef0 = b;
            cand.kernel.degree = d;
            cand.c_reg = c;
            cand.epsilon = e;
            out.push_back(cand);
          }
  return out;
}

Split holdout_split(Eigen::Index n, double fraction, std::uint64_t seed) {
  if (n < 2) throw InputError("need at least two samples to split");
  if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("train fraction must lie in (0, 1)");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = std::clamp<Eigen::Index>(std::llround(fraction * static_cast<double>(n)), 1, n - 1);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.test.assign(idx.begin() + n_train, idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace {

SvrProblem make_problem(const CvData& data, const Candidate& c) {
  SvrProblem p;
  p.inputs = data.inputs;
  p.targets = data.targets;
  p.weights = data.weights;
  p.c_reg = c.c_reg;
  p.epsilon = c.epsilon;
  p.kernel = c.kernel;
  p.tol = data.tol;
  return p;
}

CvData subset(const CvData& data, const std::vector<Eigen::Index>& rows) {
  const auto n = data.inputs.rows();
  const auto m = static_cast<Eigen::Index>(rows.size());
  CvData out;
  out.inputs.resize(m, 2);
  out.targets.resize(2 * m);
  out.weights.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    out.inputs.row(i) = data.inputs.row(r);
    out.targets(i) = data.targets(r);
    out.targets(m + i) = data.targets(n + r);
    out.weights(i) = data.weights(r);
  }
  out.ops = data.ops;
  out.grid = data.grid;
  out.fc = data.fc;
  out.tol = data.tol;
  return out;
}

// Predictions run serially inside the candidate loop; the outer
// loop is the parallel one.
constexpr Exec kInner = Exec::serial;

}  // namespace

Fitted fit_and_predict(const CvData& train, const Candidate& c, SolverMode mode, const RowMatrix& query) {
  const auto n = train.inputs.rows();
  if (train.targets.size() != 2 * n) throw InputError("cross-validation targets must be [u; v]");
  Fitted out;
  const bool has_grid = train.ops.has_value() && train.grid.rows() == train.ops->size();
  if (mode == SolverMode::single) {
    SvrProblem p = make_problem(train, c);
    DualSolution sol[2];
    for (int k = 0; k < 2; ++k) {
      p.targets = train.targets.segment(k * n, n);
      sol[k] = solve_wsvm(p);
      out.iterations += sol[k].iterations;
      out.kkt_residual = std::max(out.kkt_residual, sol[k].kkt_residual);
      out.converged = out.converged && sol[k].converged;
      out.support_vectors += sol[k].support_vectors;
    }
    out.u = predict(sol[0], c.kernel, train.inputs, query, 0, kInner);
    out.v = predict(sol[1], c.kernel, train.inputs, query, 0, kInner);
    if (has_grid)
      out.residual = constraint_residual(*train.ops, predict(sol[0], c.kernel, train.inputs, train.grid, 0, kInner),
                                         predict(sol[1], c.kernel, train.inputs, train.grid, 0, kInner));
    return out;
  }
  DualSolution sol;
  if (mode == SolverMode::mo) {
    sol = solve_mo_wsvm(make_problem(train, c));
    if (has_grid)
      out.residual = constraint_residual(*train.ops, predict(sol, c.kernel, train.inputs, train.grid, 0, kInner),
                                         predict(sol, c.kernel, train.inputs, train.grid, 1, kInner));
  } else {
    if (!has_grid) throw InputError("the flow-constrained solver needs grid operators");
    FcSolution fc = solve_mo_wsvm_fc(make_problem(train, c), *train.ops, train.grid, train.fc);
    sol = std::move(fc.dual);
    out.residual = fc.residual;
    out.rho = fc.rho;
    out.converged = !fc.rho_max_reached;
    for (const auto& step : fc.schedule) out.iterations += step.iterations;
  }
  if (mode == SolverMode::mo) out.iterations = sol.iterations;
  out.kkt_residual = sol.kkt_residual;
  out.converged = out.converged && sol.converged;
  out.support_vectors = sol.support_vectors;
  out.u = predict(sol, c.kernel, train.inputs, query, 0, kInner);
  out.v = predict(sol, c.kernel, train.inputs, query, 1, kInner);
  return out;
}

CvResult cross_validate(const CvData& data, const CvSpec& spec) {
  spec.validate();
  const auto n = data.inputs.rows();
  if (data.inputs.cols() != 2 || data.targets.size() != 2 * n || data.weights.size() != n)
    throw InputError("cross-validation data has inconsistent shapes");

  std::vector<Split> splits;
  std::mt19937_64 seeder(spec.seed);
  for (int f = 0; f < spec.folds; ++f) splits.push_back(holdout_split(n, spec.train_fraction, seeder()));
  std::vector<CvData> trains;
  for (const auto& s : splits) trains.push_back(subset(data, s.train));

  const auto cands = candidates(spec);
  CvResult result;
  result.searched = !spec.fixed.has_value();
  result.rows.resize(cands.size());
  std::vector<std::string> errors(cands.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < cands.size(); ++k) {
    CvRow row;
    row.candidate = cands[k];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      for (std::size_t f = 0; f < splits.size(); ++f) {
        const auto& test = splits[f].test;
        const auto m = static_cast<Eigen::Index>(test.size());
        RowMatrix q(m, 2);
        std::vector<double> pred(2 * test.size()), truth(2 * test.size()), z(2 * test.size());
        for (Eigen::Index i = 0; i < m; ++i) {
          const Eigen::Index r = test[static_cast<std::size_t>(i)];
          q.row(i) = data.inputs.row(r);
          truth[i] = data.targets(r);
          truth[m + i] = data.targets(n + r);
          z[i] = z[m + i] = data.weights(r);
        }
        const Fitted fit = fit_and_predict(trains[f], cands[k], spec.solver, q);
        for (Eigen::Index i = 0; i < m; ++i) {
          pred[i] = fit.u(i);
          pred[m + i] = fit.v(i);
        }
        const ErrorPair e = mae_wmae(pred, truth, z);
        row.mae += e.mae / static_cast<double>(splits.size());
        row.wmae += e.wmae / static_cast<double>(splits.size());
        row.div += fit.residual.s_v / static_cast<double>(splits.size());
        row.curl += fit.residual.s_d / static_cast<double>(splits.size());
      }
    } catch (const std::exception& ex) {
      errors[k] = ex.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.rows[k] = row;
  }
  for (const auto& e : errors)
    if (!e.empty()) throw InputError("cross-validation candidate failed: " + e);

  for (std::size_t k = 1; k < result.rows.size(); ++k)
    if (result.rows[k].wmae < result.rows[result.best_index].wmae) result.best_index = k;
  result.best = result.rows[result.best_index].candidate;
  return result;
}

void write_cv_table(std::ostream& out, const CvResult& result) {
  out << "kernel,C,epsilon,gamma,beta,d,MAE,WMAE,div,curl,seconds\n";
  char buf[512];
  for (const auto& r : result.rows) {
    const auto& c = r.candidate;
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%d,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                  to_string(c.kernel.kind).c_str(), c.c_reg, c.epsilon, c.kernel.gamma, c.kernel.coef0,
                  c.kernel.degree, r.mae, r.wmae, r.div, r.curl, r.seconds);
    out << buf;
  }
}

}  // namespace skytrack
