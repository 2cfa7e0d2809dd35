#include "skytrack/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace skytrack {

ThermalFrame::ThermalFrame(Grid temps_centikelvin, FrameMeta meta)
    : temps_(std::move(temps_centikelvin)), meta_(meta) {
  if (temps_.rows() < 2 || temps_.cols() < 2)
    throw InputError("thermal frame must be at least 2x2");
  if (!temps_.isFinite().all()) throw InputError("thermal frame contains non-finite temperatures");
  if ((temps_ <= 0.0).any()) throw InputError("thermal frame temperatures must be positive");
  if (!std::isfinite(meta_.air_temp) || meta_.air_temp <= 0.0)
    throw InputError("air temperature must be positive");
}

void HeightModel::validate() const {
  if (!(lapse_rate > 0.0)) throw InputError("lapse rate must be positive");
  if (!(height_floor >= 0.0)) throw InputError("height floor must be non-negative");
  if (!(height_ceiling > height_floor)) throw InputError("height ceiling must exceed the floor");
}

CloudMask CloudMask::all(Eigen::Index rows, Eigen::Index cols, bool value) {
  return CloudMask{MaskGrid::Constant(rows, cols, value ? 1 : 0)};
}

std::size_t CloudMask::count() const {
  return static_cast<std::size_t>((bits != 0).count());
}

HeightField height_map(const ThermalFrame& frame, const HeightModel& model) {
  model.validate();
  const double air = frame.meta().air_temp;
  Grid h = (air - frame.temps() / 100.0) / model.lapse_rate;
  return HeightField{h.max(model.height_floor).min(model.height_ceiling)};
}

double focal_length_px(Eigen::Index rows, Eigen::Index cols, double diag_fov) {
  if (!(diag_fov > 0.0 && diag_fov < std::numbers::pi))
    throw InputError("diagonal field of view must lie in (0, pi)");
  const double half_diag = 0.5 * std::hypot(static_cast<double>(rows), static_cast<double>(cols));
  return half_diag / std::tan(0.5 * diag_fov);
}

PixelGeometry pixel_geometry(Eigen::Index rows, Eigen::Index cols, double sun_elevation,
                             double sun_azimuth, double diag_fov) {
  const double f = focal_length_px(rows, cols, diag_fov);
  // World axes: x east, y north, z up.
  const Eigen::Vector3d boresight(std::cos(sun_elevation) * std::sin(sun_azimuth),
                                  std::cos(sun_elevation) * std::cos(sun_azimuth),
                                  std::sin(sun_elevation));
  const Eigen::Vector3d right(std::cos(sun_azimuth), -std::sin(sun_azimuth), 0.0);
  const Eigen::Vector3d down = boresight.cross(right);
  const double cr = 0.5 * static_cast<double>(rows - 1);
  const double cc = 0.5 * static_cast<double>(cols - 1);

  auto ground = [&](double r, double c) -> Eigen::Vector2d {
    const Eigen::Vector3d ray = f * boresight + (c - cc) * right + (r - cr) * down;
    if (!(ray.z() > 1e-12)) throw InputError("pixel ray does not reach the cloud plane");
    return ray.head<2>() / ray.z();
  };

  PixelGeometry geom{Grid(rows, cols), Grid(rows, cols), diag_fov};
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double rd = static_cast<double>(r);
      const double cd = static_cast<double>(c);
      geom.dx(r, c) = (ground(rd, cd + 0.5) - ground(rd, cd - 0.5)).norm();
      geom.dy(r, c) = (ground(rd + 0.5, cd) - ground(rd - 0.5, cd)).norm();
    }
  }
  return geom;
}

PixelGeometry pixel_geometry(const ThermalFrame& frame, double diag_fov) {
  return pixel_geometry(frame.rows(), frame.cols(), frame.meta().sun_elevation,
                        frame.meta().sun_azimuth, diag_fov);
}

// ---------------------------------------------------------------------------

namespace {

struct Blob {
  double x, y, inv2s2, sign;
};

struct LayerField {
  std::vector<Blob> opacity;
  std::vector<Blob> texture;
  Vec2 velocity_px;
  double temperature;
  double amplitude;
};

double blob_sum(const std::vector<Blob>& blobs, double x, double y) {
  double s = 0.0;
  for (const auto& b : blobs) {
    const double dx = x - b.x;
    const double dy = y - b.y;
    const double e = (dx * dx + dy * dy) * b.inv2s2;
    if (e < 18.0) s += b.sign * std::exp(-e);
  }
  return s;
}

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

LayerField build_layer(const SceneSpec& spec, const SceneLayer& layer) {
  LayerField field;
  field.velocity_px = metric_to_pixel_velocity(spec, layer);
  field.temperature = spec.air_temp - spec.lapse_rate * layer.height_m + layer.temp_offset_k;
  field.amplitude = layer.texture_amplitude_k;

  // Content at pixel p and frame k is F(p - v k); cover the whole swept box.
  const double travel_x = field.velocity_px.x() * (spec.frames - 1);
  const double travel_y = field.velocity_px.y() * (spec.frames - 1);
  const double pad = 3.0 * layer.blob_radius_px;
  const double x0 = std::min(0.0, -travel_x) - pad;
  const double x1 = static_cast<double>(spec.cols) + std::max(0.0, -travel_x) + pad;
  const double y0 = std::min(0.0, -travel_y) - pad;
  const double y1 = static_cast<double>(spec.rows) + std::max(0.0, -travel_y) + pad;
  const double area = (x1 - x0) * (y1 - y0);

  std::mt19937_64 rng(layer.seed);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1), jitter(0.7, 1.3), coin(0.0, 1.0);

  const double r = layer.blob_radius_px;
  const auto n_opaque = static_cast<int>(std::lround(layer.coverage * area / (std::numbers::pi * r * r)));
  for (int i = 0; i < n_opaque; ++i) {
    const double sigma = 0.5 * r * jitter(rng);
    field.opacity.push_back({ux(rng), uy(rng), 1.0 / (2.0 * sigma * sigma), 1.0});
  }
  const double ts = 0.4 * r;
  const auto n_texture = static_cast<int>(std::lround(0.5 * area / (std::numbers::pi * ts * ts)));
  for (int i = 0; i < n_texture; ++i) {
    const double sigma = ts * jitter(rng);
    field.texture.push_back({ux(rng), uy(rng), 1.0 / (2.0 * sigma * sigma), coin(rng) < 0.5 ? -1.0 : 1.0});
  }
  return field;
}

}  // namespace

Vec2 metric_to_pixel_velocity(const SceneSpec& spec, const SceneLayer& layer) {
  if (!(layer.height_m > 0.0)) throw InputError("scene layer height must be positive");
  if (!(spec.frame_rate > 0.0) || !(spec.vector_scale > 0.0))
    throw InputError("scene frame rate and vector scale must be positive");
  const double dx = 1.0 / focal_length_px(spec.rows, spec.cols, spec.diag_fov);
  return layer.velocity_ms * spec.frame_rate / (spec.vector_scale * dx * layer.height_m);
}

Scene synth_scene(const SceneSpec& spec) {
  if (spec.rows < 2 || spec.cols < 2) throw InputError("scene must be at least 2x2");
  if (spec.frames < 1) throw InputError("scene needs at least one frame");
  if (spec.layers.size() > 2) throw InputError("scenes support at most two layers");

  // Upper (higher) layers are drawn first so lower layers occlude them.
  std::vector<std::size_t> order(spec.layers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.layers[a].height_m > spec.layers[b].height_m;
  });

  std::vector<LayerField> fields;
  for (const auto& layer : spec.layers) fields.push_back(build_layer(spec, layer));

  Scene scene;
  for (std::size_t a = 0; a < fields.size(); ++a)
    for (std::size_t b = a + 1; b < fields.size(); ++b)
      if (std::abs(fields[a].temperature - fields[b].temperature) <=
          fields[a].amplitude + fields[b].amplitude)
        scene.indistinguishable_layers = true;

  std::mt19937_64 noise_rng(spec.noise_seed);
  std::normal_distribution<double> noise(0.0, spec.noise_k > 0.0 ? spec.noise_k : 1.0);

  const Eigen::Index rows = spec.rows, cols = spec.cols;
  for (int k = 0; k < spec.frames; ++k) {
    Grid temps(rows, cols);
    MaskGrid mask(rows, cols);
    std::vector<std::size_t> visible(fields.size(), 0);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double t = spec.sky_temp;
        double clear = 1.0;
        int top = -1;
        for (std::size_t idx : order) {
          const auto& f = fields[idx];
          const double x = static_cast<double>(c) - f.velocity_px.x() * k;
          const double y = static_cast<double>(r) - f.velocity_px.y() * k;
          const double a = smoothstep((blob_sum(f.opacity, x, y) - 0.2) / spec.edge_softness);
          if (a <= 0.0) continue;
          const double tex = std::clamp(blob_sum(f.texture, x, y), -1.0, 1.0);
          t = (1.0 - a) * t + a * (f.temperature + f.amplitude * tex);
          clear *= 1.0 - a;
          if (a > 0.5) top = static_cast<int>(idx);
        }
        if (spec.noise_k > 0.0) t += noise(noise_rng);
        temps(r, c) = 100.0 * t;
        mask(r, c) = (1.0 - clear) >= spec.mask_opacity ? 1 : 0;
        if (top >= 0) ++visible[static_cast<std::size_t>(top)];
      }
    }

    FrameMeta meta;
    meta.frame_index = k;
    meta.timestamp = spec.start_time + k / spec.frame_rate;
    meta.sun_elevation = std::numbers::pi / 2.0;
    meta.sun_azimuth = 0.0;
    meta.air_temp = spec.air_temp;

    SceneTruth truth;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      truth.velocity_ms.push_back(spec.layers[i].velocity_ms);
      truth.velocity_px.push_back(fields[i].velocity_px);
      truth.height_m.push_back(spec.layers[i].height_m);
      truth.visible_fraction.push_back(static_cast<double>(visible[i]) / static_cast<double>(rows * cols));
    }
    scene.frames.push_back(SceneFrame{ThermalFrame(std::move(temps), meta), CloudMask{std::move(mask)},
                                      std::move(truth)});
  }
  return scene;
}

}  // namespace skytrack
