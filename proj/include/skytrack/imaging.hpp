#pragma once

#include <cstdint>
#include <vector>

#include "skytrack/grid.hpp"

namespace skytrack {

struct FrameMeta {
  std::int64_t frame_index = 0;
  double timestamp = 0.0;       // seconds since epoch
  double sun_elevation = 1.5707963267948966;  // radians
  double sun_azimuth = 0.0;     // radians
  double air_temp = 300.0;      // kelvin
};

/// One thermal image. Pixel values are centi-kelvin stored as doubles.
class ThermalFrame {
 public:
  ThermalFrame(Grid temps_centikelvin, FrameMeta meta);

  const Grid& temps() const noexcept { return temps_; }
  const FrameMeta& meta() const noexcept { return meta_; }
  Eigen::Index rows() const noexcept { return temps_.rows(); }
  Eigen::Index cols() const noexcept { return temps_.cols(); }

 private:
  Grid temps_;
  FrameMeta meta_;
};

struct HeightModel {
  double lapse_rate = 0.0065;  // kelvin per meter
  double height_floor = 0.0;
  double height_ceiling = 12000.0;

  void validate() const;
};

struct HeightField {
  Grid heights;  // meters
};

struct CloudMask {
  MaskGrid bits;

  static CloudMask all(Eigen::Index rows, Eigen::Index cols, bool value);
  std::size_t count() const;
};

struct PixelGeometry {
  Grid dx;  // meters per pixel per meter of height, along columns
  Grid dy;  // same, along rows
  double diag_fov = 0.0;
};

// Lapse-rate inversion H = (T_air - T) / lapse, clamped to the model range.
HeightField height_map(const ThermalFrame& frame, const HeightModel& model);

/// Footprint of every pixel on a horizontal plane one meter above the
/// camera. The camera is a pinhole with the given diagonal field of view,
/// boresighted at the frame's sun elevation/azimuth.
PixelGeometry pixel_geometry(const ThermalFrame& frame, double diag_fov);
PixelGeometry pixel_geometry(Eigen::Index rows, Eigen::Index cols, double sun_elevation,
                             double sun_azimuth, double diag_fov);

// Pinhole focal length in pixels for a rows x cols sensor.
double focal_length_px(Eigen::Index rows, Eigen::Index cols, double diag_fov);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneLayer {
  Vec2 velocity_ms{0.0, 0.0};    // (east/column, north/row) m/s
  double height_m = 2000.0;
  double temp_offset_k = 0.0;     // added to the lapse-rate temperature at height_m
  double texture_amplitude_k = 1.5;
  double coverage = 0.5;          // opaque blobs per blob-disc area; the cloudy share comes out lower
  double blob_radius_px = 14.0;
  std::uint64_t seed = 1;
};

struct SceneSpec {
  Eigen::Index rows = 60;
  Eigen::Index cols = 80;
  int frames = 21;
  double frame_rate = 1.0;
  double vector_scale = 2.29;
  double diag_fov = 1.0471975511965976;  // 60 degrees
  double air_temp = 300.0;
  double sky_temp = 235.0;
  double lapse_rate = 0.0065;
  double noise_k = 0.0;
  double mask_opacity = 0.7;   // combined opacity at which a pixel counts as cloud
  double edge_softness = 0.5;  // width of the opacity ramp in blob-density units
  double start_time = 0.0;
  std::uint64_t noise_seed = 7;
  std::vector<SceneLayer> layers;
};

struct SceneTruth {
  std::vector<Vec2> velocity_ms;     // per layer, in SceneSpec::layers order
  std::vector<Vec2> velocity_px;     // pixels per frame
  std::vector<double> height_m;
  std::vector<double> visible_fraction;  // share of pixels where the layer is the top opaque one
};

struct SceneFrame {
  ThermalFrame frame;
  CloudMask mask;
  SceneTruth truth;
};

struct Scene {
  std::vector<SceneFrame> frames;
  bool indistinguishable_layers = false;
};

/// Metric velocity -> pixels per frame for a zenith camera at the given height,
/// the inverse of the pipeline's metric transform.
Vec2 metric_to_pixel_velocity(const SceneSpec& spec, const SceneLayer& layer);

Scene synth_scene(const SceneSpec& spec);

}  // namespace skytrack
