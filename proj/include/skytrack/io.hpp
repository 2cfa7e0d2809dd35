#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/imaging.hpp"

namespace skytrack {

// Binary rasters. All share the layout: 4 magic bytes, little-endian u32 rows,
// u32 cols, then row-major payload.
//   TSKY  f32 centi-kelvin temperatures
//   TMSK  u8 cloud mask (0 or 1)
//   TFLD  f32 grids U, V, Phi, Psi one after the other
//   TGEO  f32 grids dx, dy (meters per pixel per meter of height)

Grid read_tsky(const std::filesystem::path& path);
void write_tsky(const std::filesystem::path& path, const Grid& temps_centikelvin);

MaskGrid read_tmsk(const std::filesystem::path& path);
void write_tmsk(const std::filesystem::path& path, const MaskGrid& mask);

struct FieldGrids {
  Grid u, v, phi, psi;
};
FieldGrids read_tfld(const std::filesystem::path& path);
void write_tfld(const std::filesystem::path& path, const FieldGrids& grids);

PixelGeometry read_tgeo(const std::filesystem::path& path);
void write_tgeo(const std::filesystem::path& path, const PixelGeometry& geom);

struct ManifestEntry {
  std::filesystem::path frame_path;  // resolved against the manifest directory
  double timestamp = 0.0;
  double sun_elevation_deg = 90.0;
  double sun_azimuth_deg = 0.0;
  double air_temp_k = 300.0;
  std::optional<std::filesystem::path> mask_path;
};

/// JSON array of {frame_path, timestamp, sun_elevation_deg, sun_azimuth_deg,
/// air_temp_k, mask_path?}. Relative paths are taken relative to the manifest.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Paths are written as given (callers pass them relative to the manifest).
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Frame with metadata converted to radians.
ThermalFrame load_frame(const ManifestEntry& entry, std::int64_t index);

/// The entry's mask, or an all-cloud mask when it has none.
CloudMask load_mask(const ManifestEntry& entry, Eigen::Index rows, Eigen::Index cols);

/// Flat `key = value` text: one pair per line, `#` starts a comment, blank
/// lines are skipped. Duplicate keys and lines without `=` are InputErrors.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

/// Comma-separated list of numbers.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace skytrack
