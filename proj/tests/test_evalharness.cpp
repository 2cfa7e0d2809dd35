#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "skytrack/evalharness.hpp"

using namespace skytrack;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

// Samples of u = 2x - y + 0.5, v = -x + 3y - 1 at random points in the unit square.
CvData linear_field(int n, std::uint64_t seed) {
  const auto xs = random_vec(2 * static_cast<std::size_t>(n), seed, 0.0, 1.0);
  CvData d;
  d.inputs.resize(n, 2);
  d.targets.resize(2 * n);
  d.weights = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const double x = xs[2 * i], y = xs[2 * i + 1];
    d.inputs.row(i) << x, y;
    d.targets(i) = 2 * x - y + 0.5;
    d.targets(n + i) = -x + 3 * y - 1;
  }
  return d;
}

}  // namespace

TEST_CASE("mae_wmae: definitional cases") {
  const std::vector<double> truth{1.0, -2.0, 0.5, 4.0};
  const std::vector<double> pred{1.5, -1.0, 0.5, 1.0};
  const std::vector<double> ones(4, 1.0);
  const auto e = mae_wmae(pred, truth, ones);
  CHECK(e.mae == doctest::Approx((0.5 + 1.0 + 0.0 + 3.0) / 4));
  CHECK(e.wmae == doctest::Approx(e.mae).epsilon(1e-15));

  const auto same = mae_wmae(truth, truth, ones);
  CHECK(same.mae == 0.0);
  CHECK(same.wmae == 0.0);

  const std::vector<double> onehot{0.0, 0.0, 0.0, 7.0};
  CHECK(mae_wmae(pred, truth, onehot).wmae == doctest::Approx(3.0));

  const std::vector<double> zeros(4, 0.0);
  CHECK_THROWS_AS(mae_wmae(pred, truth, zeros), InputError);
  CHECK_THROWS_AS(mae_wmae(pred, std::vector<double>{1.0}, ones), InputError);
  const std::vector<double> negative{1.0, -1.0, 1.0, 1.0};
  CHECK_THROWS_AS(mae_wmae(pred, truth, negative), InputError);
}

TEST_CASE("mae_wmae: WMAE lies between the smallest and largest error") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_vec(30, seed, -5, 5), t = random_vec(30, seed + 100, -5, 5),
               z = random_vec(30, seed + 200, 0, 1);
    double lo = 1e300, hi = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      lo = std::min(lo, std::abs(p[i] - t[i]));
      hi = std::max(hi, std::abs(p[i] - t[i]));
    }
    const auto e = mae_wmae(p, t, z);
    CHECK(e.wmae >= lo - 1e-12);
    CHECK(e.wmae <= hi + 1e-12);
  }
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  const double pi = std::numbers::pi;
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
  CHECK(wrap_angle(2 * pi) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(wrap_angle(3 * pi / 2) == doctest::Approx(-pi / 2));
  CHECK(wrap_angle(-7 * pi / 2) == doctest::Approx(pi / 2));
}

TEST_CASE("mape_labels") {
  const LayerLabel truth{2000.0, 10.0, 0.5};
  SUBCASE("exact estimate") {
    const auto m = mape_labels(truth, truth);
    CHECK(m.height == 0.0);
    CHECK(m.speed == 0.0);
    CHECK(m.direction == 0.0);
    CHECK(m.combined == 0.0);
  }
  SUBCASE("height off by 10 percent") {
    const auto m = mape_labels({2200.0, 10.0, 0.5}, truth);
    CHECK(m.height == doctest::Approx(10.0));
    CHECK(m.combined == doctest::Approx(10.0 / 3));
  }
  SUBCASE("a full turn wraps to zero") {
    const auto m = mape_labels({2000.0, 10.0, 0.5 + 2 * std::numbers::pi}, truth);
    CHECK(m.direction == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("direction is a percentage of pi") {
    const auto m = mape_labels({2000.0, 10.0, 0.5 - std::numbers::pi / 4}, truth);
    CHECK(m.direction == doctest::Approx(25.0));
  }
  SUBCASE("zero labels are skipped") {
    const auto m = mape_labels({100.0, 3.0, 0.5 + std::numbers::pi / 2}, {0.0, 0.0, 0.5});
    CHECK(m.height_skipped);
    CHECK(m.speed_skipped);
    CHECK(m.combined == doctest::Approx(50.0));
  }
}

TEST_CASE("selection_score") {
  const std::vector<double> constant(8, 6.0);
  CHECK(selection_score(constant) == doctest::Approx(3.0));
  CHECK(selection_score(std::vector<double>(5, 0.0)) == 0.0);
  const std::vector<double> alternating{0, 2, 0, 2, 0, 2};
  CHECK(selection_score(alternating) == doctest::Approx(0.5 * 1.0 + 0.5 * 2.0));

  bool single = false;
  CHECK(selection_score(std::vector<double>{4.0}, &single) == doctest::Approx(2.0));
  CHECK(single);
  selection_score(alternating, &single);
  CHECK_FALSE(single);
  CHECK_THROWS_AS(selection_score(std::vector<double>{}), InputError);

  // Non-negative, zero only when every value is zero.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = random_vec(10, seed, 0, 50);
    CHECK(selection_score(m) > 0.0);
  }
}

TEST_CASE("holdout_split") {
  const auto s = holdout_split(200, 0.75, 3);
  CHECK(s.train.size() == 150);
  CHECK(s.test.size() == 50);
  std::vector<int> seen(200, 0);
  for (auto i : s.train) ++seen[static_cast<std::size_t>(i)];
  for (auto i : s.test) ++seen[static_cast<std::size_t>(i)];
  for (int c : seen) CHECK(c == 1);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  const auto again = holdout_split(200, 0.75, 3);
  CHECK(again.train == s.train);
  CHECK(holdout_split(200, 0.75, 4).train != s.train);
  const auto tiny = holdout_split(2, 0.99, 0);
  CHECK(tiny.train.size() == 1);
  CHECK(tiny.test.size() == 1);
  CHECK_THROWS_AS(holdout_split(1, 0.75, 0), InputError);
  CHECK_THROWS_AS(holdout_split(10, 1.0, 0), InputError);
}

TEST_CASE("candidates enumerate the grid in order") {
  CvSpec spec;
  spec.kind = KernelKind::rbf;
  spec.c_grid = {1, 10};
  spec.epsilon_grid = {0.1, 0.2, 0.3};
  spec.gamma_grid = {0.5, 2};
  const auto c = candidates(spec);
  REQUIRE(c.size() == 12);
  CHECK(c[0].c_reg == 1);
  CHECK(c[0].epsilon == 0.1);
  CHECK(c[0].kernel.gamma == 0.5);
  CHECK(c[1].kernel.gamma == 2);
  CHECK(c[2].epsilon == 0.2);
  CHECK(c[11].c_reg == 10);
  CHECK(c[11].epsilon == 0.3);
  CHECK(c[11].kernel.gamma == 2);
}

TEST_CASE("cross_validate: errors") {
  const auto data = linear_field(40, 1);
  CvSpec spec;
  spec.epsilon_grid.clear();
  CHECK_THROWS_AS(cross_validate(data, spec), InputError);
  spec = {};
  spec.train_fraction = 0.0;
  CHECK_THROWS_AS(cross_validate(data, spec), InputError);
  spec = {};
  spec.solver = SolverMode::mo_fc;
  CHECK_THROWS_AS(cross_validate(data, spec), InputError);
}

TEST_CASE("cross_validate: singleton grid returns it") {
  const auto data = linear_field(60, 2);
  CvSpec spec;
  spec.c_grid = {5.0};
  spec.epsilon_grid = {0.05};
  const auto r = cross_validate(data, spec);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.best.c_reg == 5.0);
  CHECK(r.best.epsilon == 0.05);
  CHECK(r.searched);
}

TEST_CASE("cross_validate: fixed mode replays the supplied parameters") {
  const auto data = linear_field(60, 3);
  CvSpec spec;
  spec.c_grid = {1, 2, 3};
  spec.fixed = Candidate{KernelSpec{}, 31.06, 0.31};
  const auto r = cross_validate(data, spec);
  CHECK_FALSE(r.searched);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.best.c_reg == 31.06);
  CHECK(r.best.epsilon == 0.31);
}

TEST_CASE("cross_validate: the data-generating degree wins or ties") {
  // Quadratic field, polynomial kernel (x.y + 1)^d. Degree 1 cannot represent
  // it; degree 2 can; degree 4 can as well and may tie within the tube width.
  const int n = 120;
  const auto xs = random_vec(2 * n, 9, -1.0, 1.0);
  CvData d;
  d.inputs.resize(n, 2);
  d.targets.resize(2 * n);
  d.weights = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const double x = xs[2 * i], y = xs[2 * i + 1];
    d.inputs.row(i) << x, y;
    d.targets(i) = x * x - 0.5 * x * y + 0.3;
    d.targets(n + i) = 0.8 * y * y + x - 0.2;
  }
  CvSpec spec;
  spec.kind = KernelKind::polynomial;
  spec.c_grid = {1000.0};
  spec.epsilon_grid = {0.01};
  spec.gamma_grid = {1.0};
  spec.beta_grid = {1.0};
  spec.degree_grid = {1, 2, 4};
  spec.seed = 5;
  const auto r = cross_validate(d, spec);
  REQUIRE(r.rows.size() == 3);
  const double best = std::min({r.rows[0].wmae, r.rows[1].wmae, r.rows[2].wmae});
  CHECK(r.rows[1].wmae <= best + 0.01);
  CHECK(r.rows[1].wmae <= 0.01 + 1e-3);
  CHECK(r.rows[0].wmae > 10 * r.rows[1].wmae);
  CHECK(r.best.kernel.degree != 1);
}

TEST_CASE("cross_validate: ties keep the first candidate in grid order") {
  // Identical candidates score identically.
  const auto data = linear_field(50, 4);
  CvSpec spec;
  spec.c_grid = {10.0, 10.0, 10.0};
  const auto r = cross_validate(data, spec);
  CHECK(r.rows[0].wmae == r.rows[1].wmae);
  CHECK(r.best_index == 0);
}

TEST_CASE("cross_validate: deterministic and FC residuals reported") {
  auto data = linear_field(80, 6);
  data.ops = FlowConstraintOps::build(12, 16);
  data.grid.resize(12 * 16, 2);
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 16; ++c) data.grid.row(r * 16 + c) << c / 15.0, r / 15.0;
  CvSpec spec;
  spec.c_grid = {1.0, 38.5};
  spec.epsilon_grid = {0.05, 0.19};
  spec.folds = 2;
  spec.seed = 11;

  spec.solver = SolverMode::mo;
  const auto a = cross_validate(data, spec);
  const auto b = cross_validate(data, spec);
  REQUIRE(a.rows.size() == 4);
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].wmae == b.rows[k].wmae);
    CHECK(a.rows[k].div == b.rows[k].div);
    CHECK(a.rows[k].div > 0.0);
  }
  CHECK(a.best_index == b.best_index);

  spec.solver = SolverMode::mo_fc;
  const auto fc = cross_validate(data, spec);
  for (std::size_t k = 0; k < fc.rows.size(); ++k) {
    CHECK(fc.rows[k].div <= 1e-6);
    CHECK(fc.rows[k].curl <= 1e-6);
    CHECK(fc.rows[k].div < a.rows[k].div);
  }

  spec.solver = SolverMode::single;
  const auto single = cross_validate(data, spec);
  CHECK(single.rows.size() == 4);
}

TEST_CASE("write_cv_table") {
  CvResult r;
  CvRow row;
  row.candidate = Candidate{KernelSpec{KernelKind::rbf, 0.5, 0.0, 2}, 31.06, 0.31};
  row.mae = 0.25;
  row.wmae = 0.125;
  row.div = 1e-7;
  row.curl = 0.0;
  row.seconds = 1.5;
  r.rows.push_back(row);
  std::ostringstream out;
  write_cv_table(out, r);
  CHECK(out.str() ==
        "kernel,C,epsilon,gamma,beta,d,MAE,WMAE,div,curl,seconds\n"
        "rbf,31.06,0.31,0.5,0,2,0.25,0.125,1e-07,0,1.500\n");
}
