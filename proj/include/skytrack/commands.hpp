#pragma once

#include <filesystem>
#include <ostream>

#include "skytrack/imaging.hpp"
#include "skytrack/pipeline.hpp"

namespace skytrack {

/// Scene description as JSON text: top-level scene fields (rows, cols,
/// frames, frame_rate, delta, diag_fov_deg, air_temp_k, sky_temp_k,
/// lapse_rate, noise_k, noise_seed, mask_opacity, edge_softness, start_time,
/// ell) and a non-empty `layers` array of {velocity_ms: [u, v], height_m,
/// temp_offset_k, texture_amplitude_k, coverage, blob_radius_px, seed}. Without `frames`
/// the sequence is ell + 15 frames long (ell defaults to 6).
SceneSpec parse_scene_spec(const std::string& json_text);
SceneSpec read_scene_spec(const std::filesystem::path& path);

/// Writes frame_NNNN.tsky, mask_NNNN.tmsk, manifest.json and truth.json.
/// The camera looks at the zenith.
void write_dataset(const SceneSpec& spec, const std::filesystem::path& out_dir);

/// synth command: read_scene_spec + write_dataset.
void cmd_synth(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir);

struct PlotOptions {
  int isoline_levels = 12;
  int quiver_stride = 1;  // draw every n-th sample
};

/// plot command: one SVG per frame per layer from a results.csv and the
/// files next to it. Returns the number of images written.
int cmd_plot(const std::filesystem::path& results_csv, const std::filesystem::path& out_dir,
             const PlotOptions& options = {});

/// cv command: runs the pipeline over the manifest and cross-validates every
/// frame's layer samples with the grid. Per-candidate scores are averaged
/// over all frames and layers; the table goes to `table`.
CvResult cmd_cv(const std::filesystem::path& manifest, const CvSpec& grid, const PipelineConfig& config,
                std::ostream& table);

}  // namespace skytrack
