#include "skytrack/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace skytrack::kernels {

namespace {

// Shared by both paths so the E step stays bit-identical regardless of policy.
bool responsibility_row(double x, std::span<const double> log_prior,
                        std::span<const double> alpha, std::span<const double> beta,
                        std::span<const double> log_b, double* row) {
  const std::size_t c_count = log_prior.size();
  const double lx = std::log(x);
  const double l1x = std::log1p(-x);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < c_count; ++c) {
    row[c] = log_prior[c] + (alpha[c] - 1.0) * lx + (beta[c] - 1.0) * l1x - log_b[c];
    if (std::isfinite(row[c])) peak = std::max(peak, row[c]);
  }
  if (!std::isfinite(peak)) {
    for (std::size_t c = 0; c < c_count; ++c) row[c] = 1.0 / static_cast<double>(c_count);
    return false;
  }
  double total = 0.0;
  for (std::size_t c = 0; c < c_count; ++c) {
    row[c] = std::isfinite(row[c]) ? std::exp(row[c] - peak) : 0.0;
    total += row[c];
  }
  for (std::size_t c = 0; c < c_count; ++c) row[c] /= total;
  return true;
}

double gaussian_taper(int dr, int dc, double center, double sigma) {
  if (sigma <= 0.0) return 1.0;
  const double a = dr - center;
  const double b = dc - center;
  return std::exp(-(a * a + b * b) / (2.0 * sigma * sigma));
}

struct Normal2 {
  double sxx = 0, sxy = 0, syy = 0, sxt = 0, syt = 0;
};

void solve_normal(const Normal2& n, double tau, double& u, double& v) {
  const double a = n.sxx + tau;
  const double d = n.syy + tau;
  const double b = n.sxy;
  const double det = a * d - b * b;
  if (!(det > 0.0) || !std::isfinite(det)) {
    u = 0.0;
    v = 0.0;
    return;
  }
  u = (-d * n.sxt + b * n.syt) / det;
  v = (b * n.sxt - a * n.syt) / det;
}

}  // namespace

int beta_responsibilities(std::span<const double> x, std::span<const double> log_prior,
                          std::span<const double> alpha, std::span<const double> beta,
                          RowMatrix& out, Exec exec) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto c_count = static_cast<Eigen::Index>(log_prior.size());
  out.resize(n, c_count);
  std::vector<double> log_b(log_prior.size());
  for (std::size_t c = 0; c < log_b.size(); ++c)
    log_b[c] = std::lgamma(alpha[c]) + std::lgamma(beta[c]) - std::lgamma(alpha[c] + beta[c]);

  int underflow = 0;
  if (exec == Exec::serial) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (!responsibility_row(x[i], log_prior, alpha, beta, log_b, out.row(i).data())) ++underflow;
    return underflow;
  }
#pragma omp parallel for schedule(static) reduction(+ : underflow)
  for (Eigen::Index i = 0; i < n; ++i)
    if (!responsibility_row(x[i], log_prior, alpha, beta, log_b, out.row(i).data())) ++underflow;
  return underflow;
}

WindowSolve weighted_window_solve(const Grid& ix, const Grid& iy, const Grid& it,
                                  const Grid& weights, int side, double tau,
                                  double taper_sigma, Exec exec) {
  const Eigen::Index rows = ix.rows();
  const Eigen::Index cols = ix.cols();
  const int lo = -(side / 2);
  const double center = lo + (side - 1) / 2.0;
  WindowSolve out{Grid::Zero(rows, cols), Grid::Zero(rows, cols), Grid::Zero(rows, cols)};

  std::vector<double> taper(static_cast<std::size_t>(side * side));
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b)
      taper[a * side + b] = gaussian_taper(lo + a, lo + b, center, taper_sigma);

  if (exec == Exec::serial) {
    // Reference: accumulate every product inside the window directly.
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        Normal2 n;
        int inside = 0;
        for (int a = 0; a < side; ++a) {
          const Eigen::Index rr = r + lo + a;
          if (rr < 0 || rr >= rows) continue;
          for (int b = 0; b < side; ++b) {
            const Eigen::Index cc = c + lo + b;
            if (cc < 0 || cc >= cols) continue;
            ++inside;
            const double w = weights(rr, cc) * taper[a * side + b];
            const double gx = ix(rr, cc), gy = iy(rr, cc), gt = it(rr, cc);
            n.sxx += w * gx * gx;
            n.sxy += w * gx * gy;
            n.syy += w * gy * gy;
            n.sxt += w * gx * gt;
            n.syt += w * gy * gt;
          }
        }
        solve_normal(n, tau, out.u(r, c), out.v(r, c));
        out.valid_fraction(r, c) = static_cast<double>(inside) / (side * side);
      }
    }
    return out;
  }

  // Parallel: precompute the weighted structure-tensor images once, then
  // gather window sums per pixel.
  const Grid wxx = weights * ix * ix;
  const Grid wxy = weights * ix * iy;
  const Grid wyy = weights * iy * iy;
  const Grid wxt = weights * ix * it;
  const Grid wyt = weights * iy * it;
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      Normal2 n;
      int inside = 0;
      for (int a = 0; a < side; ++a) {
        const Eigen::Index rr = r + lo + a;
        if (rr < 0 || rr >= rows) continue;
        for (int b = 0; b < side; ++b) {
          const Eigen::Index cc = c + lo + b;
          if (cc < 0 || cc >= cols) continue;
          ++inside;
          const double t = taper[a * side + b];
          n.sxx += t * wxx(rr, cc);
          n.sxy += t * wxy(rr, cc);
          n.syy += t * wyy(rr, cc);
          n.sxt += t * wxt(rr, cc);
          n.syt += t * wyt(rr, cc);
        }
      }
      solve_normal(n, tau, out.u(r, c), out.v(r, c));
      out.valid_fraction(r, c) = static_cast<double>(inside) / (side * side);
    }
  }
  return out;
}

RowMatrix kernel_matrix(const RowMatrix& a, const RowMatrix& b, const KernelSpec& kernel,
                        Exec exec) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  const int dim = static_cast<int>(a.cols());
  RowMatrix k(n, m);
  if (exec == Exec::serial) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) k(i, j) = kernel(a.row(i).data(), b.row(j).data(), dim);
    return k;
  }

  // Parallel: dot products through a blocked GEMM, then an elementwise map.
  k.noalias() = a * b.transpose();
  switch (kernel.kind) {
    case KernelKind::linear:
      break;
    case KernelKind::rbf: {
      const Eigen::VectorXd na = a.rowwise().squaredNorm();
      const Eigen::VectorXd nb = b.rowwise().squaredNorm();
#pragma omp parallel for schedule(static)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
          k(i, j) = std::exp(-kernel.gamma * std::max(0.0, na(i) + nb(j) - 2.0 * k(i, j)));
      break;
    }
    case KernelKind::polynomial:
#pragma omp parallel for schedule(static)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
          const double base = kernel.gamma * k(i, j) + kernel.coef0;
          double out = 1.0;
          for (int p = 0; p < kernel.degree; ++p) out *= base;
          k(i, j) = out;
        }
      break;
  }
  return k;
}

RowMatrix kernel_expansion(const RowMatrix& train, const RowMatrix& coef,
                           const Eigen::VectorXd& bias, const RowMatrix& query,
                           const KernelSpec& kernel, Exec exec) {
  const Eigen::Index q = query.rows();
  const Eigen::Index n = train.rows();
  const Eigen::Index outputs = coef.cols();
  const int dim = static_cast<int>(train.cols());
  RowMatrix out(q, outputs);
  if (exec == Exec::serial) {
    for (Eigen::Index r = 0; r < q; ++r)
      for (Eigen::Index o = 0; o < outputs; ++o) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
          s += coef(i, o) * kernel(train.row(i).data(), query.row(r).data(), dim);
        out(r, o) = s + bias(o);
      }
    return out;
  }

  constexpr Eigen::Index block = 256;
  const Eigen::Index blocks = (q + block - 1) / block;
#pragma omp parallel for schedule(static)
  for (Eigen::Index bi = 0; bi < blocks; ++bi) {
    const Eigen::Index start = bi * block;
    const Eigen::Index len = std::min(block, q - start);
    const RowMatrix kq = kernel_matrix(query.middleRows(start, len), train, kernel, Exec::serial);
    out.middleRows(start, len).noalias() = kq * coef;
    out.middleRows(start, len).rowwise() += bias.transpose();
  }
  return out;
}

}  // namespace skytrack::kernels
