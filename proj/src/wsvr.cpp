#include "skytrack/wsvr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skytrack/kernels.hpp"

namespace skytrack {

namespace {

constexpr double kTau = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Solver state over the 2n variables beta = [alpha; alpha*]. Variable t maps
// to theta index k = t mod n with sign s = +1 (alpha) or -1 (alpha*).
class Smo {
 public:
  explicit Smo(const BoxQp& qp) : qp_(qp), n_(qp.targets.size()) {
    beta_.setZero(2 * n_);
    if (qp.alpha0.size() == n_) {
      beta_.head(n_) = qp.alpha0;
      beta_.tail(n_) = qp.alpha_star0;
    }
    g_ = qp.hessian * theta();
    members_.resize(static_cast<std::size_t>(qp.n_groups));
    updates_.assign(static_cast<std::size_t>(qp.n_groups), 0);
    for (Eigen::Index k = 0; k < n_; ++k) {
      auto& m = members_[static_cast<std::size_t>(qp.group[static_cast<std::size_t>(k)])];
      m.push_back(k);
      m.push_back(k + n_);
    }
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * qp.hessian.diagonal().cwiseAbs().maxCoeff() *
                         qp.caps.sum();
    tol_ = std::max(qp.tol, floor);
  }

  DualSolution run() {
    const long max_iter = qp_.max_iter > 0 ? qp_.max_iter : std::max<long>(1000000, 1000 * n_);
    DualSolution out;
    std::vector<double> gmax(members_.size()), gmax2(members_.size());
    std::vector<Eigen::Index> gmax_idx(members_.size());
    long it = 0;
    for (; it < max_iter; ++it) {
      if (n_ > 0 && it % n_ == 0) out.objective_trace.push_back(objective());
      int worst = -1;
      double worst_gap = tol_;
      for (std::size_t gi = 0; gi < members_.size(); ++gi) {
        scan_group(gi, gmax[gi], gmax2[gi], gmax_idx[gi]);
        const double gap = gmax[gi] + gmax2[gi];
        if (gap > worst_gap) {
          worst_gap = gap;
          worst = static_cast<int>(gi);
        }
      }
      if (worst < 0) {
        out.converged = true;
        break;
      }
      const Eigen::Index i = gmax_idx[static_cast<std::size_t>(worst)];
      const Eigen::Index j = select_j(static_cast<std::size_t>(worst), i, gmax[static_cast<std::size_t>(worst)]);
      if (j < 0) {
        out.converged = true;
        break;
      }
      update_pair(i, j);
      const auto gi = static_cast<std::size_t>(worst);
      if (++updates_[gi] % std::max<long>(1, static_cast<long>(members_[gi].size()) / 8) == 0) polish(gi);
    }
    out.iterations = it;
    out.objective_trace.push_back(objective());

    // Shrink alpha_k and alpha*_k together; theta and the equality sums are unchanged.
    for (Eigen::Index k = 0; k < n_; ++k) {
      const double m = std::min(beta_(k), beta_(k + n_));
      if (m > 0.0) {
        beta_(k) -= m;
        beta_(k + n_) -= m;
      }
    }
    out.alpha = beta_.head(n_);
    out.alpha_star = beta_.tail(n_);
    out.objective = objective();
    out.bias.resize(qp_.n_groups);
    for (std::size_t gi = 0; gi < members_.size(); ++gi) out.bias(static_cast<Eigen::Index>(gi)) = -rho(gi);
    out.kkt_residual = kkt_residual();
    for (Eigen::Index k = 0; k < n_; ++k)
      if (out.alpha(k) - out.alpha_star(k) != 0.0) ++out.support_vectors;
    return out;
  }

 private:
  double sign(Eigen::Index t) const { return t < n_ ? 1.0 : -1.0; }
  Eigen::Index idx(Eigen::Index t) const { return t < n_ ? t : t - n_; }
  double cap(Eigen::Index t) const { return qp_.caps(idx(t)); }
  double grad(Eigen::Index t) const {
    const double s = sign(t);
    return s * g_(idx(t)) + qp_.epsilon - s * qp_.targets(idx(t));
  }
  bool below_cap(Eigen::Index t) const { return beta_(t) < cap(t); }
  bool above_zero(Eigen::Index t) const { return beta_(t) > 0.0; }
  bool in_up(Eigen::Index t) const { return sign(t) > 0 ? below_cap(t) : above_zero(t); }
  bool in_low(Eigen::Index t) const { return sign(t) > 0 ? above_zero(t) : below_cap(t); }

  Eigen::VectorXd theta() const { return beta_.head(n_) - beta_.tail(n_); }

  double objective() const {
    const Eigen::VectorXd th = theta();
    return 0.5 * th.dot(g_) - qp_.targets.dot(th) + qp_.epsilon * beta_.sum();
  }

  // Largest -s*G over the up set (and its index), largest s*G over the low set.
  void scan_group(std::size_t gi, double& up, double& low, Eigen::Index& up_idx) const {
    up = -kInf;
    low = -kInf;
    up_idx = -1;
    for (auto t : members_[gi]) {
      const double sg = sign(t) * grad(t);
      if (in_up(t) && -sg >= up) {
        up = -sg;
        up_idx = t;
      }
      if (in_low(t) && sg >= low) low = sg;
    }
  }

  // Second-order choice of j for a fixed i.
  Eigen::Index select_j(std::size_t gi, Eigen::Index i, double gmax) const {
    const double hii = qp_.hessian(idx(i), idx(i));
    Eigen::Index best = -1;
    double best_obj = kInf;
    for (auto t : members_[gi]) {
      if (!in_low(t)) continue;
      const double st = sign(t);
      const double grad_diff = gmax + st * grad(t);
      if (grad_diff <= 0.0) continue;
      const double htt = qp_.hessian(idx(t), idx(t));
      // Moving along s_i e_i - s_t e_t changes theta by one unit at k_i and -1 at k_t.
      double quad = hii + htt - 2.0 * qp_.hessian(idx(i), idx(t));
      if (quad <= 0.0) quad = kTau;
      const double obj = -(grad_diff * grad_diff) / quad;
      if (obj <= best_obj) {
        best_obj = obj;
        best = t;
      }
    }
    return best;
  }

  void update_pair(Eigen::Index i, Eigen::Index j) {
    const double ci = cap(i), cj = cap(j);
    const double old_i = beta_(i), old_j = beta_(j);
    const double qij = sign(i) * sign(j) * qp_.hessian(idx(i), idx(j));
    const double qdi = qp_.hessian(idx(i), idx(i)), qdj = qp_.hessian(idx(j), idx(j));
    const double gi = grad(i), gj = grad(j);
    double& ai = beta_(i);
    double& aj = beta_(j);
    if (sign(i) != sign(j)) {
      double quad = qdi + qdj + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-gi - gj) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) {
          aj = 0.0;
          ai = diff;
        }
      } else if (ai < 0.0) {
        ai = 0.0;
        aj = -diff;
      }
      if (diff > ci - cj) {
        if (ai > ci) {
          ai = ci;
          aj = ci - diff;
        }
      } else if (aj > cj) {
        aj = cj;
        ai = cj + diff;
      }
    } else {
      double quad = qdi + qdj - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (gi - gj) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > ci) {
        if (ai > ci) {
          ai = ci;
          aj = sum - ci;
        }
      } else if (aj < 0.0) {
        aj = 0.0;
        ai = sum;
      }
      if (sum > cj) {
        if (aj > cj) {
          aj = cj;
          ai = sum - cj;
        }
      } else if (ai < 0.0) {
        ai = 0.0;
        aj = sum;
      }
    }
    const double dti = sign(i) * (ai - old_i);
    const double dtj = sign(j) * (aj - old_j);
    if (dti != 0.0) g_ += qp_.hessian.row(idx(i)).transpose() * dti;
    if (dtj != 0.0) g_ += qp_.hessian.row(idx(j)).transpose() * dtj;
  }

  // Newton step on the free variables of one group with every other variable
  // held fixed: solve [H_FF -1; 1' 0][theta_F; rho] = [y_F - s_F eps - H_FB theta_B; -sum theta_B]
  // and move toward the solution as far as the signs and the box allow. Pair
  // updates alone crawl when H is badly conditioned (large flow penalties).
  void polish(std::size_t gi) {
    std::vector<Eigen::Index> free;
    std::vector<double> sgn;
    double fixed_sum = 0.0;
    for (auto t : members_[gi]) {
      if (t >= n_) continue;
      const double a = beta_(t), b = beta_(t + n_), c = qp_.caps(t);
      if (a > 0.0 && a < c && b == 0.0) {
        free.push_back(t);
        sgn.push_back(1.0);
      } else if (b > 0.0 && b < c && a == 0.0) {
        free.push_back(t);
        sgn.push_back(-1.0);
      } else {
        fixed_sum += a - b;
      }
    }
    const auto f = static_cast<Eigen::Index>(free.size());
    if (f == 0) return;
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(f + 1, f + 1);
    Eigen::VectorXd rhs(f + 1), th(f);
    for (Eigen::Index a = 0; a < f; ++a) {
      const auto ka = free[static_cast<std::size_t>(a)];
      for (Eigen::Index b = 0; b < f; ++b) sys(a, b) = qp_.hessian(ka, free[static_cast<std::size_t>(b)]);
      sys(a, f) = -1.0;
      sys(f, a) = 1.0;
      th(a) = beta_(ka) - beta_(ka + n_);
    }
    const Eigen::VectorXd hff_th = sys.topLeftCorner(f, f) * th;
    for (Eigen::Index a = 0; a < f; ++a) {
      const auto ka = free[static_cast<std::size_t>(a)];
      rhs(a) = qp_.targets(ka) - sgn[static_cast<std::size_t>(a)] * qp_.epsilon - (g_(ka) - hff_th(a));
    }
    rhs(f) = -fixed_sum;
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sys);
    const Eigen::VectorXd sol = cod.solve(rhs);
    if (!sol.allFinite() || (sys * sol - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) return;
    const Eigen::VectorXd d = sol.head(f) - th;

    double step = 1.0;
    Eigen::Index limit = -1;
    double limit_value = 0.0;
    for (Eigen::Index a = 0; a < f; ++a) {
      const double c = qp_.caps(free[static_cast<std::size_t>(a)]);
      const double lo = sgn[static_cast<std::size_t>(a)] > 0 ? 0.0 : -c;
      const double hi = sgn[static_cast<std::size_t>(a)] > 0 ? c : 0.0;
      double t = 1.0, edge = 0.0;
      if (d(a) > 0.0) {
        t = (hi - th(a)) / d(a);
        edge = hi;
      } else if (d(a) < 0.0) {
        t = (lo - th(a)) / d(a);
        edge = lo;
      }
      if (t < step) {
        step = std::max(t, 0.0);
        limit = a;
        limit_value = edge;
      }
    }
    if (step <= 0.0) return;
    // Objective change along theta_F + step d: step * grad_F.d + step^2 / 2 * d'H_FF d.
    double lin = 0.0;
    for (Eigen::Index a = 0; a < f; ++a) {
      const auto ka = free[static_cast<std::size_t>(a)];
      lin += (g_(ka) - qp_.targets(ka) + sgn[static_cast<std::size_t>(a)] * qp_.epsilon) * d(a);
    }
    const double quad = d.dot(sys.topLeftCorner(f, f) * d);
    if (step * lin + 0.5 * step * step * quad >= 0.0) return;

    for (Eigen::Index a = 0; a < f; ++a) {
      const auto ka = free[static_cast<std::size_t>(a)];
      double nt = a == limit ? limit_value : th(a) + step * d(a);
      if (sgn[static_cast<std::size_t>(a)] > 0) {
        nt = std::clamp(nt, 0.0, qp_.caps(ka));
        beta_(ka) = nt;
      } else {
        nt = std::clamp(nt, -qp_.caps(ka), 0.0);
        beta_(ka + n_) = -nt;
      }
      const double delta = nt - th(a);
      if (delta != 0.0) g_ += qp_.hessian.row(ka).transpose() * delta;
    }
  }

  double rho(std::size_t gi) const {
    double ub = kInf, lb = -kInf, sum = 0.0;
    int free = 0;
    for (auto t : members_[gi]) {
      const double yg = sign(t) * grad(t);
      if (beta_(t) >= cap(t)) {
        if (sign(t) < 0)
          ub = std::min(ub, yg);
        else
          lb = std::max(lb, yg);
      } else if (beta_(t) <= 0.0) {
        if (sign(t) > 0)
          ub = std::min(ub, yg);
        else
          lb = std::max(lb, yg);
      } else {
        sum += yg;
        ++free;
      }
    }
    if (free > 0) return sum / free;
    if (std::isfinite(ub) && std::isfinite(lb)) return 0.5 * (ub + lb);
    if (std::isfinite(ub)) return ub;
    if (std::isfinite(lb)) return lb;
    return 0.0;
  }

  double kkt_residual() const {
    double r = 0.0;
    for (std::size_t gi = 0; gi < members_.size(); ++gi) {
      double up, low;
      Eigen::Index ui;
      scan_group(gi, up, low, ui);
      if (std::isfinite(up) && std::isfinite(low)) r = std::max(r, up + low);
      double eq = 0.0;
      for (auto t : members_[gi]) eq += sign(t) * beta_(t);
      r = std::max(r, std::abs(eq));
    }
    for (Eigen::Index k = 0; k < n_; ++k) r = std::max(r, beta_(k) * beta_(k + n_));
    return r;
  }

  const BoxQp& qp_;
  Eigen::Index n_;
  Eigen::VectorXd beta_;
  Eigen::VectorXd g_;  // H theta
  std::vector<std::vector<Eigen::Index>> members_;
  std::vector<long> updates_;  // pair updates per group, drives the polish cadence
  double tol_ = 1e-7;
};

RowMatrix symmetrize(RowMatrix k) {
  const RowMatrix t = k.transpose();
  k = 0.5 * (k + t);
  return k;
}

}  // namespace

RowMatrix gram(const RowMatrix& xa, const RowMatrix& xb, const KernelSpec& kernel) {
  kernel.validate();
  if (xa.cols() != xb.cols()) throw InputError("gram inputs differ in dimension");
  RowMatrix k = kernels::kernel_matrix(xa, xb, kernel);
  if (&xa == &xb || (xa.rows() == xb.rows() && xa == xb)) k = symmetrize(std::move(k));
  return k;
}

RowMatrix gram_mo(const RowMatrix& x, const KernelSpec& kernel) {
  const RowMatrix k = gram(x, x, kernel);
  const Eigen::Index n = x.rows();
  RowMatrix out = RowMatrix::Zero(2 * n, 2 * n);
  out.topLeftCorner(n, n) = k;
  out.bottomRightCorner(n, n) = k;
  return out;
}

DualSolution solve_box_qp(const BoxQp& qp) {
  const Eigen::Index n = qp.targets.size();
  if (qp.hessian.rows() != n || qp.hessian.cols() != n || qp.caps.size() != n ||
      qp.group.size() != static_cast<std::size_t>(n))
    throw InputError("QP dimensions disagree");
  if (qp.n_groups < 1) throw InputError("QP needs at least one equality group");
  for (int g : qp.group)
    if (g < 0 || g >= qp.n_groups) throw InputError("QP group id out of range");
  if ((qp.caps.array() < 0.0).any() || !qp.caps.allFinite()) throw InputError("QP caps must be finite and >= 0");
  if (!qp.targets.allFinite() || !qp.hessian.allFinite()) throw InputError("QP data must be finite");
  if ((qp.hessian - qp.hessian.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, qp.hessian.cwiseAbs().maxCoeff()))
    throw InputError("QP Hessian must be symmetric");
  if (!(qp.epsilon >= 0.0)) throw InputError("epsilon must be >= 0");
  if (qp.alpha0.size() != 0 || qp.alpha_star0.size() != 0) {
    if (qp.alpha0.size() != n || qp.alpha_star0.size() != n) throw InputError("warm start has the wrong size");
    if ((qp.alpha0.array() < 0.0).any() || (qp.alpha_star0.array() < 0.0).any() ||
        (qp.alpha0.array() > qp.caps.array()).any() || (qp.alpha_star0.array() > qp.caps.array()).any())
      throw InputError("warm start violates the box");
  }
  return Smo(qp).run();
}

void SvrProblem::validate(int outputs) const {
  const Eigen::Index n = inputs.rows();
  if (n < 2) throw InputError("SVR needs at least two samples");
  if (targets.size() != outputs * n) throw InputError("SVR target length does not match the sample count");
  if (weights.size() != n) throw InputError("SVR weight length does not match the sample count");
  if (!targets.allFinite() || !inputs.allFinite()) throw InputError("SVR data must be finite");
  if ((weights.array() < 0.0).any() || (weights.array() > 1.0).any() || !weights.allFinite())
    throw InputError("SVR weights must lie in [0, 1]");
  if (!(c_reg > 0.0) || !std::isfinite(c_reg)) throw InputError("C must be positive");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InputError("epsilon must be >= 0");
  kernel.validate();
}

namespace {

BoxQp mo_qp(const SvrProblem& p, RowMatrix hessian) {
  const Eigen::Index n = p.inputs.rows();
  BoxQp qp;
  qp.hessian = std::move(hessian);
  qp.targets = p.targets;
  qp.caps.resize(2 * n);
  qp.caps << p.weights, p.weights;
  qp.caps *= p.c_reg / static_cast<double>(2 * n);
  qp.group.assign(static_cast<std::size_t>(2 * n), 0);
  std::fill(qp.group.begin() + n, qp.group.end(), 1);
  qp.n_groups = 2;
  qp.epsilon = p.epsilon;
  qp.tol = p.tol;
  qp.max_iter = p.max_iter;
  return qp;
}

}  // namespace

DualSolution solve_wsvm(const SvrProblem& p) {
  p.validate(1);
  const Eigen::Index n = p.inputs.rows();
  BoxQp qp;
  qp.hessian = gram(p.inputs, p.inputs, p.kernel);
  qp.targets = p.targets;
  qp.caps = p.weights * (p.c_reg / static_cast<double>(n));
  qp.group.assign(static_cast<std::size_t>(n), 0);
  qp.epsilon = p.epsilon;
  qp.tol = p.tol;
  qp.max_iter = p.max_iter;
  return solve_box_qp(qp);
}

DualSolution solve_mo_wsvm(const SvrProblem& p) {
  p.validate(2);
  return solve_box_qp(mo_qp(p, gram_mo(p.inputs, p.kernel)));
}

FlowConstraintOps FlowConstraintOps::build(int rows, int cols) {
  if (rows < 1 || cols < 1) throw InputError("grid must be non-empty");
  FlowConstraintOps ops;
  ops.rows = rows;
  ops.cols = cols;
  const Eigen::Index g = ops.size();
  std::vector<Eigen::Triplet<double>> tx, ty;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Eigen::Index p = static_cast<Eigen::Index>(r) * cols + c;
      if (c + 1 < cols) {
        tx.emplace_back(p, p + 1, 1.0);
        tx.emplace_back(p, p, -1.0);
      }
      if (r + 1 < rows) {
        ty.emplace_back(p, p + cols, 1.0);
        ty.emplace_back(p, p, -1.0);
      }
    }
  ops.dx.resize(g, g);
  ops.dy.resize(g, g);
  ops.dx.setFromTriplets(tx.begin(), tx.end());
  ops.dy.setFromTriplets(ty.begin(), ty.end());
  return ops;
}

ConstraintResidual constraint_residual(const FlowConstraintOps& ops, const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& v) {
  if (u.size() != ops.size() || v.size() != ops.size()) throw InputError("field size does not match the operators");
  const Eigen::VectorXd ru = ops.dx * u, rv = ops.dy * v;
  return {(ru + rv).squaredNorm(), (ru - rv).squaredNorm()};
}

FcSolution solve_mo_wsvm_fc(const SvrProblem& p, const FlowConstraintOps& ops, const RowMatrix& grid,
                            const FcOptions& options) {
  p.validate(2);
  if (grid.rows() != ops.size() || grid.cols() != p.inputs.cols())
    throw InputError("grid coordinates do not match the operators");
  if (!(options.rho0 > 0.0) || !(options.rho_factor > 1.0) || !(options.rho_max >= options.rho0) ||
      !(options.fc_tol >= 0.0))
    throw InputError("invalid flow-constraint schedule");

  const Eigen::Index n = p.inputs.rows();
  const RowMatrix kg = gram(grid, p.inputs, p.kernel);
  const RowMatrix au = ops.dx * kg;
  const RowMatrix av = ops.dy * kg;
  const RowMatrix pu = au.transpose() * au;
  const RowMatrix pv = av.transpose() * av;
  const RowMatrix base = gram_mo(p.inputs, p.kernel);

  FcSolution out;
  BoxQp qp = mo_qp(p, base);
  for (double rho = options.rho0;; rho *= options.rho_factor) {
    qp.hessian = base;
    qp.hessian.topLeftCorner(n, n) += (4.0 * rho) * pu;
    qp.hessian.bottomRightCorner(n, n) += (4.0 * rho) * pv;
    qp.hessian = symmetrize(std::move(qp.hessian));
    DualSolution sol = solve_box_qp(qp);
    const Eigen::VectorXd th = sol.theta();
    const Eigen::VectorXd ru = au * th.head(n), rv = av * th.tail(n);
    const ConstraintResidual res{(ru + rv).squaredNorm(), (ru - rv).squaredNorm()};
    out.schedule.push_back({rho, res, sol.iterations});
    qp.alpha0 = sol.alpha;
    qp.alpha_star0 = sol.alpha_star;
    out.dual = std::move(sol);
    out.rho = rho;
    out.residual = res;
    if (res.max() <= options.fc_tol) break;
    if (rho * options.rho_factor > options.rho_max) {
      out.rho_max_reached = true;
      break;
    }
  }
  return out;
}

Eigen::VectorXd predict(const DualSolution& solution, const KernelSpec& kernel, const RowMatrix& train,
                        const RowMatrix& query, int output, Exec exec) {
  const Eigen::Index n = train.rows();
  if (output < 0 || output >= solution.bias.size()) throw InputError("output index out of range");
  if (solution.alpha.size() < (output + 1) * n) throw InputError("solution does not cover the training set");
  RowMatrix coef = (solution.alpha.segment(output * n, n) - solution.alpha_star.segment(output * n, n));
  Eigen::VectorXd bias(1);
  bias(0) = solution.bias(output);
  return kernels::kernel_expansion(train, coef, bias, query, kernel, exec).col(0);
}

}  // namespace skytrack
