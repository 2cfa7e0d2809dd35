#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/layers.hpp"
#include "skytrack/motionpool.hpp"

namespace skytrack {

struct ImportanceWeights {
  std::vector<double> w;  // sums to one
  bool degenerate = false;  // no finite likelihood, weights set uniform
};

/// Likelihood of every vector under one layer's Gaussian, normalized in log-space.
ImportanceWeights importance_weights(std::span<const Vec2> vectors, const Gaussian2& layer);

/// Running sum of the weights; the last element is pinned to exactly one.
std::vector<double> weight_cdf(std::span<const double> w);

enum class CdfRule {
  upper,    // first index whose CDF value is >= z: inclusion probability equals the weight
  nearest,  // index whose CDF value is nearest to z (ties to the lower index)
};

/// Draws `quota` uniforms and maps each to a pool index through the CDF.
/// Duplicates are kept.
std::vector<std::size_t> sample_layer(std::span<const double> w, int quota, std::uint64_t seed,
                                      CdfRule rule = CdfRule::upper);

/// Row-normalized layer likelihoods under a uniform prior (n x layers). Rows
/// without a finite likelihood become uniform and are counted in `flagged`.
RowMatrix posteriors(std::span<const Vec2> vectors, const VelocityModel& model, int* flagged = nullptr);

struct SampleSet {
  RowMatrix coords;      // N* x 2, (col, row) in pixels
  RowMatrix velocities;  // N* x 2, m/s
  RowMatrix posteriors;  // N* x layers
  std::vector<std::size_t> source;  // pool index of every sample
  std::vector<int> drawn_for;       // layer whose quota produced the sample
  bool degenerate_weights = false;
  int flagged_rows = 0;

  Eigen::Index size() const { return coords.rows(); }
};

/// N* samples: floor(N*/C) per layer, remainder to layer 0 (the upper layer
/// after ordering). Layer c uses its own stream derived from `seed`.
SampleSet subsample(const VectorPool& pool, const VelocityModel& model, int n_star, std::uint64_t seed,
                    CdfRule rule = CdfRule::upper);

}  // namespace skytrack
