#include "skytrack/optflow.hpp"

#include <cmath>

#include "skytrack/kernels.hpp"

namespace skytrack {

namespace {

std::vector<double> gaussian_taps(double sigma, int radius) {
  std::vector<double> g(2 * radius + 1);
  double s = 0.0;
  for (int k = -radius; k <= radius; ++k) s += g[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (auto& w : g) w /= s;
  return g;
}

// Scaled so that the response to a unit ramp is exactly one.
std::vector<double> derivative_taps(double sigma, int radius) {
  std::vector<double> d(2 * radius + 1);
  double s = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    d[k + radius] = k * std::exp(-0.5 * k * k / (sigma * sigma));
    s += k * d[k + radius];
  }
  for (auto& w : d) w /= s;
  return d;
}

Grid filter_rows(const Grid& in, const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  const Eigen::Index cols = in.cols();
  Grid out(in.rows(), cols);
  for (Eigen::Index r = 0; r < in.rows(); ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const Eigen::Index cc = std::clamp<Eigen::Index>(c + k, 0, cols - 1);
        s += taps[k + radius] * in(r, cc);
      }
      out(r, c) = s;
    }
  return out;
}

Grid filter_cols(const Grid& in, const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  const Eigen::Index rows = in.rows();
  Grid out(rows, in.cols());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const Eigen::Index rr = std::clamp<Eigen::Index>(r + k, 0, rows - 1);
        s += taps[k + radius] * in(rr, c);
      }
      out(r, c) = s;
    }
  return out;
}

}  // namespace

void WlkConfig::validate() const {
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(window_size))));
  if (window_size < 4 || s * s != window_size) throw InputError("window size must be a perfect square of side >= 2");
  if (!(reg_tau >= 0.0)) throw InputError("regularization must be non-negative");
  if (!(kernel_sigma > 0.0)) throw InputError("kernel sigma must be positive");
  if (!(frame_rate > 0.0)) throw InputError("frame rate must be positive");
  if (!(vector_scale > 0.0)) throw InputError("vector scale must be positive");
}

int WlkConfig::side() const { return static_cast<int>(std::lround(std::sqrt(static_cast<double>(window_size)))); }

Derivatives derivatives(const Grid& prev, const Grid& next, double sigma) {
  if (!(sigma > 0.0)) throw InputError("derivative kernel sigma must be positive");
  if (prev.rows() != next.rows() || prev.cols() != next.cols()) throw InputError("frame dimensions differ");
  const double lo = std::min(prev.minCoeff(), next.minCoeff());
  const double hi = std::max(prev.maxCoeff(), next.maxCoeff());
  const double span = hi > lo ? hi - lo : 1.0;
  const Grid a = (prev - lo) / span;
  const Grid b = (next - lo) / span;

  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const auto g = gaussian_taps(sigma, radius);
  const auto d = derivative_taps(sigma, radius);
  const Grid mean = 0.5 * (a + b);
  Derivatives out;
  out.ix = filter_cols(filter_rows(mean, d), g);
  out.iy = filter_rows(filter_cols(mean, d), g);
  out.it = filter_cols(filter_rows(b - a, g), g);
  return out;
}

Derivatives derivatives(const ThermalFrame& prev, const ThermalFrame& next, double sigma) {
  return derivatives(prev.temps(), next.temps(), sigma);
}

LayerFlow wlk(const Derivatives& d, const Grid& weights, const WlkConfig& cfg, Exec exec) {
  cfg.validate();
  if (weights.rows() != d.ix.rows() || weights.cols() != d.ix.cols()) throw InputError("weight grid size mismatch");
  if ((weights < 0.0).any() || (weights > 1.0).any()) throw InputError("window weights must lie in [0, 1]");
  const int side = cfg.side();
  const double taper_sigma = cfg.taper ? 0.5 * side : 0.0;
  auto solved = kernels::weighted_window_solve(d.ix, d.iy, d.it, weights, side, cfg.reg_tau, taper_sigma, exec);
  LayerFlow out{std::move(solved.u), std::move(solved.v), MaskGrid()};
  out.low_confidence = (solved.valid_fraction < 0.25).cast<std::uint8_t>();
  return out;
}

MetricFlow to_metric_layer(const LayerFlow& flow, const Grid& gamma, double height, const PixelGeometry& geom,
                           const WlkConfig& cfg) {
  if (!(height > 0.0) || !std::isfinite(height)) throw InputError("layer height must be positive");
  if (gamma.rows() != flow.u.rows() || gamma.cols() != flow.u.cols() || geom.dx.rows() != flow.u.rows() ||
      geom.dx.cols() != flow.u.cols())
    throw InputError("metric transform grid size mismatch");
  const double scale = cfg.vector_scale / cfg.frame_rate * height;
  return MetricFlow{scale * geom.dx * gamma * flow.u, scale * geom.dy * gamma * flow.v};
}

MetricFlow to_metric(std::span<const LayerFlow> flows, std::span<const Grid> gammas, std::span<const double> heights,
                     const PixelGeometry& geom, const WlkConfig& cfg) {
  if (flows.empty() || flows.size() != gammas.size() || flows.size() != heights.size())
    throw InputError("one flow, responsibility grid and height is needed per layer");
  MetricFlow sum{Grid::Zero(geom.dx.rows(), geom.dx.cols()), Grid::Zero(geom.dx.rows(), geom.dx.cols())};
  for (std::size_t c = 0; c < flows.size(); ++c) {
    const auto part = to_metric_layer(flows[c], gammas[c], heights[c], geom, cfg);
    sum.u += part.u;
    sum.v += part.v;
  }
  return sum;
}

}  // namespace skytrack
