#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/imaging.hpp"
#include "skytrack/motionpool.hpp"

namespace skytrack {

struct Gaussian2 {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();

  double logpdf(const Vec2& x) const;
};

/// MLE mean and covariance; the covariance gets max(1e-9 * trace, 1e-9) * I
/// added when its smallest eigenvalue falls below that level.
Gaussian2 fit_gaussian(std::span<const Vec2> xs);

struct VelocityModel {
  int layers = 1;
  std::array<Gaussian2, 2> dist{};
  std::vector<int> labels;  // 0 or 1 per input vector
  std::vector<double> objective;  // sum of log-likelihoods after every half step
  int iterations = 0;
  bool converged = false;
  bool collapsed = false;  // asked for two layers, returned one
  int reinitializations = 0;

  int map_layer(const Vec2& v) const;
};

/// Hard-assignment ICM over two 2-D Gaussians from a seeded random split.
/// A random split can settle on two broad Gaussians that each straddle both
/// clusters, so the alternation is restarted `restarts` times from fresh
/// splits and the run with the highest final log-likelihood is kept.
/// `layers` = 1 skips the alternation and returns the single MLE Gaussian.
VelocityModel icm_velocity(std::span<const Vec2> vectors, int layers, std::uint64_t seed, int max_iters = 100,
                           int restarts = 8);
VelocityModel icm_velocity(const VectorPool& pool, int layers, std::uint64_t seed, int max_iters = 100,
                           int restarts = 8);

struct HeightLayers {
  int layers = 1;
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> var{1.0, 1.0};
  std::array<double, 2> cloud_height{0.0, 0.0};  // mean height of the cloud pixels assigned to each layer
  std::array<std::size_t, 2> pixels{0, 0};
  LabelGrid labels;  // -1 off the cloud mask, else 0 or 1
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
};

inline constexpr double kHeightVarFloor = 1e-6;

/// ICM on 1-D height Gaussians over cloud pixels, started from the MAP layer
/// of each pixel's velocity (u, v) under the velocity model.
/// Throws LayerEmptyError when the mask has no cloud pixel.
HeightLayers icm_height(const HeightField& heights, const CloudMask& mask, const Grid& u, const Grid& v,
                        const VelocityModel& velocity, int max_iters = 100);

struct LayerModel {
  VelocityModel velocity;
  HeightLayers height;
  bool tie = false;      // mean heights within 1 m, order left as is
  bool swapped = false;
};

/// Puts the upper layer (larger mean cloud height) first, permuting every per-layer field.
LayerModel order_layers(LayerModel model);

}  // namespace skytrack
