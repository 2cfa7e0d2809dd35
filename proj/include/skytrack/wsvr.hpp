#pragma once

#include <Eigen/Sparse>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/kernel_spec.hpp"

namespace skytrack {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Symmetrized Gram matrix K(x_i, x_j).
RowMatrix gram(const RowMatrix& xa, const RowMatrix& xb, const KernelSpec& kernel);

/// Block-diagonal [K 0; 0 K] for independent outputs.
RowMatrix gram_mo(const RowMatrix& x, const KernelSpec& kernel);

/// Box-constrained convex QP in theta = alpha - alpha*:
///
///   min 1/2 theta' H theta - y' theta + eps * sum(alpha + alpha*)
///   s.t. sum over each group g of theta_i = 0,  0 <= alpha_i, alpha*_i <= cap_i.
///
/// Groups must not share nonzero entries of H for the per-group bias to mean
/// anything; in every caller H is block-diagonal along the groups.
struct BoxQp {
  RowMatrix hessian;  // symmetric positive semidefinite
  Eigen::VectorXd targets;
  Eigen::VectorXd caps;
  std::vector<int> group;  // group id per variable, 0 .. n_groups-1
  int n_groups = 1;
  double epsilon = 0.1;
  double tol = 1e-7;       // stop when the maximal pair violation of every group is <= tol
  long max_iter = 0;       // 0 picks max(1e6, 1000 n)
  // Optional feasible warm start (both empty or both of size n).
  Eigen::VectorXd alpha0, alpha_star0;
};

struct DualSolution {
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_star;
  Eigen::VectorXd bias;  // one entry per group (per output)
  int support_vectors = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;  // max of pair violation, alpha*alpha* product and equality residual
  long iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // dual objective after every sweep of n pair updates

  Eigen::VectorXd theta() const { return alpha - alpha_star; }
};

/// SMO with second-order working-pair selection, run inside the group whose
/// maximal violation is largest. Groups already within tolerance are left
/// untouched, so a block-diagonal problem follows exactly the update sequence
/// of its blocks solved one at a time.
DualSolution solve_box_qp(const BoxQp& qp);

struct SvrProblem {
  RowMatrix inputs;        // N x 2
  Eigen::VectorXd targets;  // N, or 2N stacked as [u; v]
  Eigen::VectorXd weights;  // N, in (0, 1]
  double c_reg = 38.50;
  double epsilon = 0.19;
  KernelSpec kernel;
  double tol = 1e-7;
  long max_iter = 0;

  // Throws InputError on shape or range violations.
  void validate(int outputs) const;
};

/// Per-sample caps z_i * C / N.
DualSolution solve_wsvm(const SvrProblem& problem);

/// Both outputs over [K 0; 0 K] with caps z~_i * C / (2N), z~ = [z; z], one
/// equality constraint per output block.
DualSolution solve_mo_wsvm(const SvrProblem& problem);

/// Forward differences of a row-major rows x cols grid. dx maps a field to
/// f(r, c+1) - f(r, c), dy to f(r+1, c) - f(r, c); the last column of dx and
/// the last row of dy are zero, so a constant field maps to zero everywhere.
struct FlowConstraintOps {
  int rows = 0;
  int cols = 0;
  SparseMatrix dx;
  SparseMatrix dy;

  static FlowConstraintOps build(int rows, int cols);
  Eigen::Index size() const { return static_cast<Eigen::Index>(rows) * cols; }
};

/// The two scalar constraint residuals: s_v = |dx u + dy v|^2 and
/// s_d = |dx u - dy v|^2 over the vectorized grids.
struct ConstraintResidual {
  double s_v = 0.0;
  double s_d = 0.0;
  double max() const { return s_v > s_d ? s_v : s_d; }
};
ConstraintResidual constraint_residual(const FlowConstraintOps& ops, const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct FcOptions {
  double fc_tol = 1e-6;
  double rho0 = 1.0;
  double rho_factor = 10.0;
  double rho_max = 1e12;
};

struct FcStep {
  double rho = 0.0;
  ConstraintResidual residual;
  long iterations = 0;
};

struct FcSolution {
  DualSolution dual;
  double rho = 0.0;
  ConstraintResidual residual;
  bool rho_max_reached = false;  // residuals still above fc_tol at the largest penalty
  std::vector<FcStep> schedule;
};

/// MO solve with the penalty rho (s_v + s_d) of the field extrapolated onto
/// `grid` (ops.size() x 2 coordinates, row-major pixel order). Since
/// s_v + s_d = 2 |dx u|^2 + 2 |dy v|^2 and dx, dy annihilate the bias, the
/// penalty adds 4 rho blockdiag(A_u'A_u, A_v'A_v) to the Hessian with
/// A_u = dx K(grid, X) and A_v = dy K(grid, X). rho starts at rho0 and is
/// multiplied by rho_factor, warm-starting each solve, until both residuals
/// are <= fc_tol or rho would exceed rho_max.
FcSolution solve_mo_wsvm_fc(const SvrProblem& problem, const FlowConstraintOps& ops, const RowMatrix& grid,
                            const FcOptions& options = {});

/// f(x) = sum_i theta_i K(x_i, x) + b for output `output` (theta block
/// [output * N, (output + 1) * N) with N = train.rows()).
Eigen::VectorXd predict(const DualSolution& solution, const KernelSpec& kernel, const RowMatrix& train,
                        const RowMatrix& query, int output = 0, Exec exec = Exec::parallel);

}  // namespace skytrack
