#pragma once

// Data-parallel inner loops. Every kernel has a serial reference path and an
// OpenMP path selected by Exec. The two agree to rounding; the beta E step is
// bit-identical because both paths share the row routine.

#include <span>

#include "skytrack/grid.hpp"
#include "skytrack/kernel_spec.hpp"

namespace skytrack::kernels {

/// Per-sample mixture responsibilities of beta components, normalized in
/// log-space. `out` is n x C. Returns the number of samples whose component
/// log-densities were all non-finite; those rows are set to 1/C.
int beta_responsibilities(std::span<const double> x, std::span<const double> log_prior,
                          std::span<const double> alpha, std::span<const double> beta,
                          RowMatrix& out, Exec exec = Exec::parallel);

struct WindowSolve {
  Grid u;
  Grid v;
  Grid valid_fraction;  // in-frame share of the window
};

/// Weighted Lucas-Kanade normal equations over a side x side window at every
/// pixel, with Tikhonov term `tau` on the diagonal. `taper_sigma` <= 0
/// disables the Gaussian spatial taper.
WindowSolve weighted_window_solve(const Grid& ix, const Grid& iy, const Grid& it,
                                  const Grid& weights, int side, double tau,
                                  double taper_sigma, Exec exec = Exec::parallel);

/// K(a_i, b_j) for row-sample matrices a (n x d) and b (m x d).
RowMatrix kernel_matrix(const RowMatrix& a, const RowMatrix& b, const KernelSpec& kernel,
                        Exec exec = Exec::parallel);

/// f(q) = sum_i coef(i, o) K(x_i, q) + bias(o) for every query row and output o.
RowMatrix kernel_expansion(const RowMatrix& train, const RowMatrix& coef,
                           const Eigen::VectorXd& bias, const RowMatrix& query,
                           const KernelSpec& kernel, Exec exec = Exec::parallel);

}  // namespace skytrack::kernels
