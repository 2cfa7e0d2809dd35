#include "skytrack/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace skytrack {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

// Indices of the half of `members` that fit `dist` worst (strictly below the median log-likelihood).
template <class Score>
std::vector<std::size_t> worst_half(const std::vector<std::size_t>& members, Score score) {
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(members.size());
  for (auto i : members) ranked.emplace_back(score(i), i);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < ranked.size() / 2; ++k) out.push_back(ranked[k].second);
  return out;
}

bool all_identical(std::span<const Vec2> xs) {
  for (const auto& x : xs)
    if (x != xs.front()) return false;
  return true;
}

double velocity_objective(std::span<const Vec2> xs, const std::vector<int>& labels, const VelocityModel& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += m.dist[labels[i]].logpdf(xs[i]);
  return s;
}

}  // namespace

double Gaussian2::logpdf(const Vec2& x) const {
  const Vec2 d = x - mean;
  const double det = cov.determinant();
  const Vec2 sol = cov.llt().solve(d);
  return -kLog2Pi - 0.5 * std::log(det) - 0.5 * d.dot(sol);
}

Gaussian2 fit_gaussian(std::span<const Vec2> xs) {
  if (xs.empty()) throw InputError("cannot fit a Gaussian to no vectors");
  Gaussian2 g;
  g.mean.setZero();
  for (const auto& x : xs) g.mean += x;
  g.mean /= static_cast<double>(xs.size());
  g.cov.setZero();
  for (const auto& x : xs) g.cov += (x - g.mean) * (x - g.mean).transpose();
  g.cov /= static_cast<double>(xs.size());
  const double reg = std::max(1e-9 * g.cov.trace(), 1e-9);
  const Eigen::SelfAdjointEigenSolver<Mat2> eig(g.cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < reg) g.cov += reg * Mat2::Identity();
  return g;
}

int VelocityModel::map_layer(const Vec2& v) const {
  if (layers == 1) return 0;
  return dist[1].logpdf(v) > dist[0].logpdf(v) ? 1 : 0;
}

namespace {

VelocityModel icm_velocity_once(std::span<const Vec2> vectors, int layers, std::uint64_t seed, int max_iters) {
  const std::size_t n = vectors.size();

  VelocityModel m;
  m.labels.assign(n, 0);
  auto single = [&](VelocityModel& out) {
    out.layers = 1;
    std::fill(out.labels.begin(), out.labels.end(), 0);
    out.dist[0] = fit_gaussian(vectors);
    out.dist[1] = out.dist[0];
    out.objective.push_back(velocity_objective(vectors, out.labels, out));
    out.converged = true;
  };
  if (layers == 1) {
    single(m);
    return m;
  }
  if (all_identical(vectors)) {
    m.collapsed = true;
    single(m);
    return m;
  }

  m.layers = 2;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (auto& l : m.labels) l = coin(rng) ? 1 : 0;

  std::vector<Vec2> part[2];
  for (int it = 0; it < max_iters; ++it) {
    // Parameter update, repairing an emptied layer from the worst-fitting half of the other.
    for (int attempt = 0;; ++attempt) {
      part[0].clear();
      part[1].clear();
      for (std::size_t i = 0; i < n; ++i) part[m.labels[i]].push_back(vectors[i]);
      const int empty = part[0].empty() ? 0 : (part[1].empty() ? 1 : -1);
      if (empty < 0) break;
      if (m.reinitializations >= 1) {
        m.collapsed = true;
        m.objective.clear();
        single(m);
        m.iterations = it;
        return m;
      }
      ++m.reinitializations;
      const int full = 1 - empty;
      const Gaussian2 g = fit_gaussian(part[full]);
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i) members.push_back(i);
      for (auto i : worst_half(members, [&](std::size_t i) { return g.logpdf(vectors[i]); })) m.labels[i] = empty;
    }
    m.dist[0] = fit_gaussian(part[0]);
    m.dist[1] = fit_gaussian(part[1]);
    m.objective.push_back(velocity_objective(vectors, m.labels, m));

    int changes = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l0 = m.dist[0].logpdf(vectors[i]);
      const double l1 = m.dist[1].logpdf(vectors[i]);
      const int best = l1 > l0 ? 1 : (l0 > l1 ? 0 : m.labels[i]);
      if (best != m.labels[i]) {
        m.labels[i] = best;
        ++changes;
      }
    }
    m.objective.push_back(velocity_objective(vectors, m.labels, m));
    m.iterations = it + 1;
    if (changes == 0) {
      m.converged = true;
      break;
    }
  }
  return m;
}

}  // namespace

VelocityModel icm_velocity(std::span<const Vec2> vectors, int layers, std::uint64_t seed, int max_iters,
                           int restarts) {
  if (layers != 1 && layers != 2) throw InputError("layer count must be 1 or 2");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  if (restarts < 1) throw InputError("restarts must be at least 1");
  if (vectors.size() < 4 * static_cast<std::size_t>(layers))
    throw InputError("too few vectors for the requested layer count");
  std::mt19937_64 seeder(seed);
  VelocityModel best = icm_velocity_once(vectors, layers, seeder(), max_iters);
  for (int r = 1; r < restarts && layers == 2 && !best.collapsed; ++r) {
    VelocityModel m = icm_velocity_once(vectors, layers, seeder(), max_iters);
    if (!m.collapsed && m.objective.back() > best.objective.back()) best = std::move(m);
  }
  return best;
}

VelocityModel icm_velocity(const VectorPool& pool, int layers, std::uint64_t seed, int max_iters, int restarts) {
  std::vector<Vec2> xs;
  xs.reserve(pool.size());
  for (const auto& e : pool.entries) xs.emplace_back(e.u, e.v);
  return icm_velocity(xs, layers, seed, max_iters, restarts);
}

HeightLayers icm_height(const HeightField& heights, const CloudMask& mask, const Grid& u, const Grid& v,
                        const VelocityModel& velocity, int max_iters) {
  const Grid& h = heights.heights;
  if (mask.bits.rows() != h.rows() || mask.bits.cols() != h.cols() || u.rows() != h.rows() || u.cols() != h.cols() ||
      v.rows() != h.rows() || v.cols() != h.cols())
    throw InputError("height, mask and velocity grids differ in size");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");

  std::vector<Eigen::Index> cloud;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    if (mask.bits(i)) cloud.push_back(i);
  if (cloud.empty()) throw LayerEmptyError("cloud mask is empty, layer heights unavailable");

  HeightLayers out;
  out.layers = velocity.layers;
  out.labels = LabelGrid::Constant(h.rows(), h.cols(), -1);
  for (auto i : cloud) out.labels(i) = velocity.map_layer(Vec2(u(i), v(i)));

  auto update = [&](int c) {
    double s = 0.0, ss = 0.0;
    std::size_t cnt = 0;
    for (auto i : cloud)
      if (out.labels(i) == c) {
        s += h(i);
        ++cnt;
      }
    out.pixels[c] = cnt;
    if (cnt == 0) return false;
    const double mean = s / static_cast<double>(cnt);
    for (auto i : cloud)
      if (out.labels(i) == c) ss += (h(i) - mean) * (h(i) - mean);
    out.mean[c] = mean;
    out.var[c] = std::max(ss / static_cast<double>(cnt), kHeightVarFloor);
    return true;
  };
  auto objective = [&] {
    double s = 0.0;
    for (auto i : cloud) s += normal_logpdf(h(i), out.mean[out.labels(i)], out.var[out.labels(i)]);
    return s;
  };

  if (out.layers == 1) {
    for (auto i : cloud) out.labels(i) = 0;
    update(0);
    out.cloud_height[0] = out.mean[0];
    out.objective.push_back(objective());
    out.converged = true;
    return out;
  }

  bool repaired = false;
  for (int it = 0; it < max_iters; ++it) {
    const bool ok0 = update(0), ok1 = update(1);
    if (!ok0 || !ok1) {
      // An empty layer keeps its slot by taking the worst-fitting half of the other, once.
      if (repaired || (!ok0 && !ok1)) break;
      repaired = true;
      const int empty = ok0 ? 1 : 0;
      std::vector<std::size_t> members(cloud.size());
      for (std::size_t k = 0; k < cloud.size(); ++k) members[k] = k;
      const double m = out.mean[1 - empty], var = out.var[1 - empty];
      for (auto k : worst_half(members, [&](std::size_t k) { return normal_logpdf(h(cloud[k]), m, var); }))
        out.labels(cloud[k]) = empty;
      update(0);
      update(1);
    }
    out.objective.push_back(objective());
    int changes = 0;
    for (auto i : cloud) {
      const double l0 = normal_logpdf(h(i), out.mean[0], out.var[0]);
      const double l1 = normal_logpdf(h(i), out.mean[1], out.var[1]);
      const int best = l1 > l0 ? 1 : (l0 > l1 ? 0 : out.labels(i));
      if (best != out.labels(i)) {
        out.labels(i) = best;
        ++changes;
      }
    }
    out.objective.push_back(objective());
    out.iterations = it + 1;
    if (changes == 0) {
      out.converged = true;
      break;
    }
  }
  // Mean cloud height per layer over its final pixels; an empty layer keeps its last fitted mean.
  for (int c = 0; c < 2; ++c) {
    update(c);
    out.cloud_height[c] = out.mean[c];
  }
  return out;
}

LayerModel order_layers(LayerModel model) {
  model.tie = false;
  model.swapped = false;
  if (model.velocity.layers < 2 || model.height.layers < 2) return model;
  const double up = model.height.cloud_height[0], lo = model.height.cloud_height[1];
  if (std::abs(up - lo) < 1.0) {
    model.tie = true;
    return model;
  }
  if (up >= lo) return model;
  model.swapped = true;
  auto& vel = model.velocity;
  std::swap(vel.dist[0], vel.dist[1]);
  for (auto& l : vel.labels) l = 1 - l;
  auto& h = model.height;
  std::swap(h.mean[0], h.mean[1]);
  std::swap(h.var[0], h.var[1]);
  std::swap(h.cloud_height[0], h.cloud_height[1]);
  std::swap(h.pixels[0], h.pixels[1]);
  h.labels = h.labels.unaryExpr([](int l) { return l < 0 ? l : 1 - l; });
  return model;
}

}  // namespace skytrack
