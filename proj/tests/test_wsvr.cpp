#include <doctest.h>

#include <chrono>
#include <random>

#include "skytrack/wsvr.hpp"

using namespace skytrack;

namespace {

RowMatrix random_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrix x(n, 2);
  for (int i = 0; i < n; ++i) x.row(i) << u(rng), u(rng);
  return x;
}

RowMatrix pixel_grid(int rows, int cols) {
  RowMatrix g(static_cast<Eigen::Index>(rows) * cols, 2);
  const double s = 1.0 / (std::max(rows, cols) - 1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g.row(static_cast<Eigen::Index>(r) * cols + c) << c * s, r * s;
  return g;
}

// Closed-form least squares for y ~ w.x + b.
Eigen::Vector3d least_squares(const RowMatrix& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd a(x.rows(), 3);
  a << x, Eigen::VectorXd::Ones(x.rows());
  return (a.transpose() * a).ldlt().solve(a.transpose() * y);
}

SvrProblem problem_for(const RowMatrix& x, const Eigen::VectorXd& y, double c, double eps, KernelSpec k = {}) {
  SvrProblem p;
  p.inputs = x;
  p.targets = y;
  p.weights = Eigen::VectorXd::Ones(x.rows());
  p.c_reg = c;
  p.epsilon = eps;
  p.kernel = k;
  return p;
}

void check_kkt(const DualSolution& s, const Eigen::VectorXd& caps) {
  CHECK(s.converged);
  CHECK(s.kkt_residual <= 1e-6);
  CHECK((s.alpha.array() >= 0.0).all());
  CHECK((s.alpha_star.array() >= 0.0).all());
  CHECK(((s.alpha - caps).array() <= 1e-15).all());
  CHECK(((s.alpha_star - caps).array() <= 1e-15).all());
  CHECK(s.alpha.cwiseProduct(s.alpha_star).cwiseAbs().maxCoeff() <= 1e-10);
}

}  // namespace

TEST_CASE("gram: direct kernel values") {
  const RowMatrix eye = RowMatrix::Identity(2, 2);
  CHECK(gram(eye, eye, KernelSpec{}).isApprox(RowMatrix::Identity(2, 2)));

  KernelSpec rbf{KernelKind::rbf, 3.0, 0.0, 2};
  RowMatrix same(2, 2);
  same << 0.3, 0.4, 0.3, 0.4;
  CHECK(gram(same, same, rbf)(0, 1) == doctest::Approx(1.0));

  KernelSpec poly{KernelKind::polynomial, 1.0, 0.0, 2};
  RowMatrix a(1, 2), b(1, 2);
  a << 1.0, 1.0;
  b << 1.0, 1.0;
  CHECK(gram(a, b, poly)(0, 0) == doctest::Approx(4.0));

  const auto mo = gram_mo(random_points(4, 1), rbf);
  CHECK(mo.topRightCorner(4, 4).isZero(0.0));
  CHECK(mo.topLeftCorner(4, 4) == mo.bottomRightCorner(4, 4));

  KernelSpec bad{KernelKind::rbf, -1.0, 0.0, 2};
  CHECK_THROWS_AS(gram(a, b, bad), InputError);
}

TEST_CASE("gram: symmetric positive semidefinite for every kernel") {
  const RowMatrix x = random_points(60, 2);
  for (const KernelSpec& k : {KernelSpec{}, KernelSpec{KernelKind::rbf, 5.0, 0.0, 2},
                              KernelSpec{KernelKind::polynomial, 1.0, 1.0, 2},
                              KernelSpec{KernelKind::polynomial, 0.5, 0.3, 3}}) {
    const RowMatrix g = gram(x, x, k);
    CHECK(g == g.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * g.trace());
  }
}

TEST_CASE("solve_wsvm: linear target against the least-squares oracle") {
  // y = 2x + 1 along x in [0, 1]; the second input coordinate is a distractor.
  const int n = 41;
  RowMatrix x(n, 2);
  Eigen::VectorXd y(n);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    x.row(i) << i / double(n - 1), u(rng);
    y(i) = 2.0 * x(i, 0) + 1.0;
  }
  const auto p = problem_for(x, y, 1e3, 0.01);
  const auto s = solve_wsvm(p);
  check_kkt(s, p.weights * (p.c_reg / n));
  CHECK(std::abs(s.theta().sum()) <= 1e-8);

  const Eigen::Vector3d ls = least_squares(x, y);
  RowMatrix held(200, 2);
  for (int i = 0; i < 200; ++i) held.row(i) << u(rng), u(rng);
  const Eigen::VectorXd f = predict(s, p.kernel, x, held);
  double mae = 0.0;
  for (int i = 0; i < 200; ++i) mae += std::abs(f(i) - (ls(0) * held(i, 0) + ls(1) * held(i, 1) + ls(2)));
  CHECK(mae / 200.0 <= p.epsilon + 1e-3);

  for (std::size_t k = 1; k < s.objective_trace.size(); ++k)
    CHECK(s.objective_trace[k] <= s.objective_trace[k - 1] + 1e-12 * std::abs(s.objective_trace[k - 1]));
}

TEST_CASE("solve_wsvm: constant targets sit inside the tube with zero duals") {
  const RowMatrix x = random_points(20, 4);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 3.5);
  for (const KernelSpec& k : {KernelSpec{}, KernelSpec{KernelKind::rbf, 2.0, 0.0, 2}}) {
    const auto s = solve_wsvm(problem_for(x, y, 10.0, 0.1, k));
    CHECK(s.theta().isZero(0.0));
    CHECK(s.bias(0) == doctest::Approx(3.5).epsilon(1e-12));
    const auto f = predict(s, k, x, random_points(5, 5));
    CHECK((f.array() - 3.5).abs().maxCoeff() <= 0.1);
  }
}

TEST_CASE("solve_wsvm: a zero-weight outlier has no influence") {
  RowMatrix x = random_points(30, 6);
  Eigen::VectorXd y = 1.5 * x.col(0) - x.col(1);
  y(7) = 50.0;
  auto with = problem_for(x, y, 100.0, 0.05);
  with.weights(7) = 0.0;
  const auto s = solve_wsvm(with);
  CHECK(s.alpha(7) == 0.0);
  CHECK(s.alpha_star(7) == 0.0);

  // Same QP without the sample: the other caps stay z C / N when C shrinks by (N - 1) / N.
  RowMatrix xr(29, 2);
  Eigen::VectorXd yr(29);
  for (int i = 0, r = 0; i < 30; ++i)
    if (i != 7) {
      xr.row(r) = x.row(i);
      yr(r++) = y(i);
    }
  const auto sr = solve_wsvm(problem_for(xr, yr, 100.0 * 29.0 / 30.0, 0.05));
  const RowMatrix q = random_points(10, 7);
  CHECK((predict(s, {}, x, q) - predict(sr, {}, xr, q)).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("solve_wsvm: training points inside the tube and the linear extension") {
  const RowMatrix x = random_points(40, 8);
  const Eigen::VectorXd y = (3.0 * x.col(0) + 0.5 * x.col(1)).array() - 2.0;
  const auto p = problem_for(x, y, 1e3, 0.02);
  const auto s = solve_wsvm(p);
  const Eigen::VectorXd f = predict(s, p.kernel, x, x);
  const double cap = p.c_reg / 40.0;
  for (int i = 0; i < 40; ++i)
    if (s.alpha(i) < cap && s.alpha_star(i) < cap) CHECK(std::abs(f(i) - y(i)) <= p.epsilon + 1e-6);

  // Linear kernel: f(x) = w.x + b with w = sum theta_i x_i.
  const Eigen::Vector2d w = x.transpose() * s.theta();
  RowMatrix far(3, 2);
  far << 3.0, -2.0, -5.0, 4.0, 10.0, 10.0;
  const Eigen::VectorXd ff = predict(s, p.kernel, x, far);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(ff(i) - (w.dot(far.row(i).transpose()) + s.bias(0))) <= 1e-3);

  DualSolution zero = s;
  zero.alpha.setZero();
  zero.alpha_star.setZero();
  CHECK((predict(zero, p.kernel, x, far).array() == s.bias(0)).all());
}

TEST_CASE("solve_mo_wsvm equals two single-output solves") {
  const int n = 50;
  const RowMatrix x = random_points(n, 9);
  const Eigen::VectorXd u = 2.0 * x.col(0) - x.col(1) + 0.3 * (6.0 * x.col(1)).array().sin().matrix();
  const Eigen::VectorXd v = -x.col(0) + 0.5 * x.col(1).array().square().matrix();
  Eigen::VectorXd stacked(2 * n);
  stacked << u, v;
  for (const KernelSpec& k : {KernelSpec{}, KernelSpec{KernelKind::rbf, 4.0, 0.0, 2}}) {
    auto mo = problem_for(x, stacked, 38.5, 0.05, k);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> w(0.2, 1.0);
    for (int i = 0; i < n; ++i) mo.weights(i) = w(rng);
    const auto sm = solve_mo_wsvm(mo);
    check_kkt(sm, (Eigen::VectorXd(2 * n) << mo.weights, mo.weights).finished() * (38.5 / (2 * n)));

    auto su_p = problem_for(x, u, 38.5 / 2.0, 0.05, k);
    su_p.weights = mo.weights;
    auto sv_p = su_p;
    sv_p.targets = v;
    const auto su = solve_wsvm(su_p), sv = solve_wsvm(sv_p);
    CHECK((sm.theta().head(n) - su.theta()).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((sm.theta().tail(n) - sv.theta()).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(sm.bias(0) - su.bias(0)) <= 1e-8);
    CHECK(std::abs(sm.bias(1) - sv.bias(0)) <= 1e-8);
    CHECK(std::abs(sm.theta().head(n).sum()) <= 1e-8);
    CHECK(std::abs(sm.theta().tail(n).sum()) <= 1e-8);
  }
}

TEST_CASE("solve_mo_wsvm: constant u block stays at zero duals") {
  const int n = 30;
  const RowMatrix x = random_points(n, 11);
  Eigen::VectorXd stacked(2 * n);
  stacked << Eigen::VectorXd::Constant(n, -4.0), 2.0 * x.col(0) + x.col(1);
  const auto s = solve_mo_wsvm(problem_for(x, stacked, 100.0, 0.05));
  CHECK(s.theta().head(n).isZero(0.0));
  CHECK(s.bias(0) == doctest::Approx(-4.0));
  auto single = problem_for(x, stacked.tail(n), 50.0, 0.05);
  CHECK((s.theta().tail(n) - solve_wsvm(single).theta()).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("solve_box_qp: validation and warm start") {
  BoxQp qp;
  qp.hessian = RowMatrix::Identity(3, 3);
  qp.targets = Eigen::Vector3d(0.5, -0.5, 0.3);
  qp.caps = Eigen::Vector3d::Ones();
  qp.group = {0, 0, 0};
  qp.epsilon = 0.0;
  const auto cold = solve_box_qp(qp);
  // Minimizer of 1/2|t|^2 - y.t on sum t = 0 inside the box: t = y - mean(y).
  const Eigen::Vector3d expect = qp.targets.array() - qp.targets.mean();
  CHECK((cold.theta() - expect).cwiseAbs().maxCoeff() <= 1e-7);
  qp.alpha0 = cold.alpha;
  qp.alpha_star0 = cold.alpha_star;
  CHECK(solve_box_qp(qp).iterations == 0);

  qp.hessian(0, 1) = 0.5;
  CHECK_THROWS_AS(solve_box_qp(qp), InputError);
  qp.hessian(0, 1) = 0.0;
  qp.alpha0(0) = 2.0;
  CHECK_THROWS_AS(solve_box_qp(qp), InputError);
  qp.alpha0.resize(0);
  qp.alpha_star0.resize(0);
  qp.group = {0, 1, 0};
  CHECK_THROWS_AS(solve_box_qp(qp), InputError);

  auto bad = problem_for(random_points(1, 1), Eigen::VectorXd::Ones(1), 1.0, 0.1);
  CHECK_THROWS_AS(solve_wsvm(bad), InputError);
}

TEST_CASE("FlowConstraintOps against dense shift matrices") {
  const int rows = 4, cols = 5, g = rows * cols;
  const auto ops = FlowConstraintOps::build(rows, cols);
  // L shifts by one (x neighbour), L' by cols (y neighbour); the difference
  // operators act through their transposes, and cells without a neighbour are dropped.
  Eigen::MatrixXd lx = Eigen::MatrixXd::Zero(g, g), ly = Eigen::MatrixXd::Zero(g, g);
  for (int i = 0; i < g; ++i) {
    if (i + 1 < g) lx(i + 1, i) = 1.0;
    if (i + cols < g) ly(i + cols, i) = 1.0;
  }
  Eigen::MatrixXd dx = (lx - Eigen::MatrixXd::Identity(g, g)).transpose();
  Eigen::MatrixXd dy = (ly - Eigen::MatrixXd::Identity(g, g)).transpose();
  for (int r = 0; r < rows; ++r) dx.row(r * cols + cols - 1).setZero();
  for (int c = 0; c < cols; ++c) dy.row((rows - 1) * cols + c).setZero();
  CHECK((Eigen::MatrixXd(ops.dx) - dx).cwiseAbs().maxCoeff() == 0.0);
  CHECK((Eigen::MatrixXd(ops.dy) - dy).cwiseAbs().maxCoeff() == 0.0);

  const Eigen::VectorXd one = Eigen::VectorXd::Constant(g, 2.5);
  CHECK((ops.dx * one).isZero(0.0));
  CHECK((ops.dy * one).isZero(0.0));
  const auto res = constraint_residual(ops, one, one);
  CHECK(res.s_v == 0.0);
  CHECK(res.s_d == 0.0);
}

TEST_CASE("solve_mo_wsvm_fc: constant field equals the unconstrained fit") {
  const int rows = 12, cols = 16, n = 40;
  const auto ops = FlowConstraintOps::build(rows, cols);
  const RowMatrix grid = pixel_grid(rows, cols);
  const RowMatrix x = random_points(n, 12);
  Eigen::VectorXd t(2 * n);
  t << Eigen::VectorXd::Constant(n, 4.0), Eigen::VectorXd::Constant(n, -1.0);
  const auto p = problem_for(x, t, 38.5, 0.19);
  const auto fc = solve_mo_wsvm_fc(p, ops, grid);
  const auto mo = solve_mo_wsvm(p);
  CHECK((fc.dual.theta() - mo.theta()).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((fc.dual.bias - mo.bias).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(fc.residual.max() <= 1e-6);
  CHECK_FALSE(fc.rho_max_reached);
}

namespace {

struct FcCase {
  ConstraintResidual unconstrained;
  FcSolution fc;
};

// Fits MO and MO-FC to `field` sampled at random points and evaluates the
// constraint residuals of both extrapolated grids through the dense operators.
template <class Field>
FcCase fit_field(Field field, const KernelSpec& k, int rows, int cols, int n, std::uint64_t seed) {
  const auto ops = FlowConstraintOps::build(rows, cols);
  const RowMatrix grid = pixel_grid(rows, cols);
  const double span = double(cols - 1) / (std::max(rows, cols) - 1), hspan = double(rows - 1) / (std::max(rows, cols) - 1);
  RowMatrix x = random_points(n, seed);
  x.col(0) *= span;
  x.col(1) *= hspan;
  Eigen::VectorXd t(2 * n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d f = field(x(i, 0), x(i, 1));
    t(i) = f.x();
    t(n + i) = f.y();
  }
  auto p = problem_for(x, t, 38.5, 0.19, k);
  const auto mo = solve_mo_wsvm(p);
  FcCase out;
  out.unconstrained = constraint_residual(ops, predict(mo, k, x, grid, 0), predict(mo, k, x, grid, 1));
  out.fc = solve_mo_wsvm_fc(p, ops, grid);
  const auto direct = constraint_residual(ops, predict(out.fc.dual, k, x, grid, 0), predict(out.fc.dual, k, x, grid, 1));
  CHECK(direct.s_v == doctest::Approx(out.fc.residual.s_v).epsilon(1e-6).scale(1e-12));
  CHECK(direct.s_d == doctest::Approx(out.fc.residual.s_d).epsilon(1e-6).scale(1e-12));
  return out;
}

void check_schedule(const FcSolution& fc) {
  for (std::size_t k = 1; k < fc.schedule.size(); ++k) {
    const auto& a = fc.schedule[k - 1].residual;
    const auto& b = fc.schedule[k].residual;
    CHECK(b.s_v + b.s_d <= (a.s_v + a.s_d) * (1.0 + 1e-6) + 1e-12);
  }
}

}  // namespace

TEST_CASE("solve_mo_wsvm_fc: source field, linear kernel") {
  const auto c = fit_field([](double x, double y) { return Eigen::Vector2d(10.0 * (x - 0.5), 10.0 * (y - 0.3)); },
                           KernelSpec{}, 18, 24, 60, 13);
  CHECK(c.unconstrained.s_v > 1e-2);
  CHECK(c.fc.residual.s_v <= 1e-3 * c.unconstrained.s_v);
  CHECK(c.fc.residual.max() <= 1e-6);
  check_schedule(c.fc);
}

TEST_CASE("solve_mo_wsvm_fc: Gaussian vortex, rbf kernel") {
  const auto c = fit_field(
      [](double x, double y) {
        const double dx = x - 0.5, dy = y - 0.35, e = 20.0 * std::exp(-8.0 * (dx * dx + dy * dy));
        return Eigen::Vector2d(-dy * e, dx * e);
      },
      KernelSpec{KernelKind::rbf, 4.0, 0.0, 2}, 18, 24, 80, 14);
  CHECK(c.unconstrained.s_d > 1e-3);
  CHECK(c.fc.residual.s_d <= 1e-3 * c.unconstrained.s_d);
  CHECK(c.fc.residual.s_v <= 1e-3 * c.unconstrained.s_v);
  check_schedule(c.fc);
}

TEST_CASE("solve_mo_wsvm_fc: rigid rotation already satisfies the difference constraints") {
  // u = -y and v = x have u_x = v_y = 0, so both residuals are small before any penalty.
  const auto c = fit_field([](double x, double y) { return Eigen::Vector2d(-10.0 * (y - 0.3), 10.0 * (x - 0.5)); },
                           KernelSpec{}, 18, 24, 60, 15);
  CHECK(c.fc.residual.max() <= 1e-6);
  CHECK(c.fc.residual.max() <= c.unconstrained.max() + 1e-12);
}
