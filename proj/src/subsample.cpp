#include "skytrack/subsample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace skytrack {

ImportanceWeights importance_weights(std::span<const Vec2> vectors, const Gaussian2& layer) {
  if (vectors.empty()) throw InputError("no vectors to weight");
  ImportanceWeights out;
  out.w.resize(vectors.size());
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out.w[i] = layer.logpdf(vectors[i]);
    if (std::isfinite(out.w[i])) peak = std::max(peak, out.w[i]);
  }
  if (!std::isfinite(peak)) {
    out.degenerate = true;
    std::fill(out.w.begin(), out.w.end(), 1.0 / static_cast<double>(vectors.size()));
    return out;
  }
  double total = 0.0;
  for (auto& v : out.w) total += v = std::isfinite(v) ? std::exp(v - peak) : 0.0;
  for (auto& v : out.w) v /= total;
  return out;
}

std::vector<double> weight_cdf(std::span<const double> w) {
  std::vector<double> cdf(w.size());
  double running = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) cdf[i] = running += w[i];
  if (!cdf.empty()) {
    for (auto& c : cdf) c /= running;
    cdf.back() = 1.0;
  }
  return cdf;
}

std::vector<std::size_t> sample_layer(std::span<const double> w, int quota, std::uint64_t seed, CdfRule rule) {
  if (quota < 1) throw InputError("sample quota must be at least 1");
  if (w.empty()) throw InputError("no weights to sample from");
  const auto cdf = weight_cdf(w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(quota));
  for (int q = 0; q < quota; ++q) {
    const double z = unit(rng);
    auto j = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), z) - cdf.begin());
    if (j == cdf.size()) j = cdf.size() - 1;
    // Zero-weight entries share their CDF value with the previous entry; never pick them.
    if (rule == CdfRule::nearest && j > 0 && std::abs(cdf[j - 1] - z) <= std::abs(cdf[j] - z)) --j;
    while (w[j] <= 0.0 && j + 1 < cdf.size()) ++j;
    out.push_back(j);
  }
  return out;
}

RowMatrix posteriors(std::span<const Vec2> vectors, const VelocityModel& model, int* flagged) {
  const int layers = model.layers;
  RowMatrix z(static_cast<Eigen::Index>(vectors.size()), layers);
  int bad = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (layers == 1) {
      z(r, 0) = 1.0;
      continue;
    }
    const double l0 = model.dist[0].logpdf(vectors[i]);
    const double l1 = model.dist[1].logpdf(vectors[i]);
    if (!std::isfinite(l0) && !std::isfinite(l1)) {
      z(r, 0) = z(r, 1) = 0.5;
      ++bad;
      continue;
    }
    // Two-term log-sum-exp: z0 = 1 / (1 + exp(l1 - l0)).
    const double d = (std::isfinite(l1) ? l1 : -std::numeric_limits<double>::infinity()) -
                     (std::isfinite(l0) ? l0 : -std::numeric_limits<double>::infinity());
    z(r, 0) = 1.0 / (1.0 + std::exp(d));
    z(r, 1) = 1.0 / (1.0 + std::exp(-d));
  }
  if (flagged) *flagged = bad;
  return z;
}

SampleSet subsample(const VectorPool& pool, const VelocityModel& model, int n_star, std::uint64_t seed, CdfRule rule) {
  if (n_star < model.layers) throw InputError("N* must give every layer at least one sample");
  if (pool.entries.empty()) throw InputError("vector pool is empty");
  std::vector<Vec2> vel;
  vel.reserve(pool.size());
  for (const auto& e : pool.entries) vel.emplace_back(e.u, e.v);

  SampleSet s;
  std::mt19937_64 seeder(seed);
  const int base = n_star / model.layers;
  for (int c = 0; c < model.layers; ++c) {
    const int quota = base + (c == 0 ? n_star % model.layers : 0);
    const auto w = importance_weights(vel, model.dist[c]);
    s.degenerate_weights = s.degenerate_weights || w.degenerate;
    for (auto idx : sample_layer(w.w, quota, seeder(), rule)) {
      s.source.push_back(idx);
      s.drawn_for.push_back(c);
    }
  }
  const auto n = static_cast<Eigen::Index>(s.source.size());
  s.coords.resize(n, 2);
  s.velocities.resize(n, 2);
  std::vector<Vec2> picked;
  picked.reserve(s.source.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = pool.entries[s.source[static_cast<std::size_t>(i)]];
    s.coords(i, 0) = e.x;
    s.coords(i, 1) = e.y;
    s.velocities(i, 0) = e.u;
    s.velocities(i, 1) = e.v;
    picked.emplace_back(e.u, e.v);
  }
  s.posteriors = posteriors(picked, model, &s.flagged_rows);
  return s;
}

}  // namespace skytrack
