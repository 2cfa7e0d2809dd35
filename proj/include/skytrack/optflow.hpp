#pragma once

#include <span>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/imaging.hpp"

namespace skytrack {

struct WlkConfig {
  int window_size = 16;       // pixels in the square window; side = sqrt(window_size)
  double reg_tau = 1e-8;      // Tikhonov term on the normal equations
  double kernel_sigma = 1.0;  // derivative-of-Gaussian amplitude
  double frame_rate = 1.0;    // frames per second
  double vector_scale = 2.29;
  bool taper = true;          // Gaussian spatial taper on top of the layer weights

  void validate() const;
  int side() const;
};

struct Derivatives {
  Grid ix, iy, it;
};

/// Jointly min-max normalizes both frames, then takes derivative-of-Gaussian
/// spatial gradients of their average and the Gaussian-smoothed difference
/// next - prev. Borders replicate the edge pixel.
Derivatives derivatives(const ThermalFrame& prev, const ThermalFrame& next, double sigma);
Derivatives derivatives(const Grid& prev, const Grid& next, double sigma);

struct LayerFlow {
  Grid u;  // pixels per frame, along columns
  Grid v;  // pixels per frame, along rows
  MaskGrid low_confidence;  // window clipped below 25% of its area
};

LayerFlow wlk(const Derivatives& d, const Grid& weights, const WlkConfig& cfg, Exec exec = Exec::parallel);

struct MetricFlow {
  Grid u;  // m/s
  Grid v;
};

/// One layer's share of the metric transform: (delta / f_r) * dx * H * gamma * u.
MetricFlow to_metric_layer(const LayerFlow& flow, const Grid& gamma, double height, const PixelGeometry& geom,
                           const WlkConfig& cfg);

/// Sum of the per-layer shares, one flow, responsibility grid and height per layer.
MetricFlow to_metric(std::span<const LayerFlow> flows, std::span<const Grid> gammas, std::span<const double> heights,
                     const PixelGeometry& geom, const WlkConfig& cfg);

}  // namespace skytrack
