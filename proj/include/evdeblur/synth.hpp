#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evdeblur/checkpoint.hpp"
#include "evdeblur/events.hpp"
#include "evdeblur/training.hpp"

namespace evdeblur {

struct SceneConfig {
  int width = 48;
  int height = 48;
  int shapes = 4;
  double min_speed = 0.5;  // px per frame
  double max_speed = 2.0;
  int frames = 16;
  std::int64_t frame_interval_us = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// High-rate sharp RGB frames (3×H×W, values in [0, 1]) of anti-aliased discs
/// and rectangles drifting (and bouncing off an inner margin) over a static sinusoidal texture.
std::vector<Tensor<float>> synth_scene(const SceneConfig& cfg);

struct BlurResult {
  Tensor<float> blurry;
  Tensor<float> sharp;  // middle frame of the window
  int frames_averaged = 0;
  std::int64_t exposure_us = 0;  // (M − 1)·interval
};

/// Mean of frames [start, start + M). Protocol mode restricts M to [7, 13].
BlurResult make_blur(const std::vector<Tensor<float>>& frames, int M, std::int64_t frame_interval_us,
                     bool protocol = true, int start = 0);

/// ITU-R BT.601 luma of a 3×H×W image, as 1×H×W.
Tensor<double> luma(const Tensor<float>& rgb);

struct ManifestEntry {
  std::string name;
  std::string blurry;  // paths relative to the manifest directory
  std::string sharp;
  std::string events;
  std::string stack;
  int frames_averaged = 0;
  double bin_us = 0.0;
  std::int64_t exposure_us = 0;
  int frame_count = 0;
  int width = 0;
  int height = 0;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  Json scene;  // generating SceneConfig, for provenance
  double threshold = 0.2;
  std::vector<ManifestEntry> samples;
};

Json scene_to_json(const SceneConfig& cfg);
SceneConfig scene_from_json(const Json& j);
Json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const Json& j);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct SampleOptions {
  int frames_averaged = 7;
  std::optional<double> bin_us;  // unset: protocol binning ΔT = T/M
  SimConfig sim;
  bool protocol = true;
};

/// In-memory sample: scene → blur → events over the averaged window → frames.
Sample make_sample(const SceneConfig& scene, const SampleOptions& opt, EventStream* events_out = nullptr);

/// Writes blurry/sharp PPMs, EVT1 events and a TEN1 stack under `dir`.
ManifestEntry build_sample(const SceneConfig& scene, const SampleOptions& opt, const std::filesystem::path& dir,
                           const std::string& name);

/// Loads and validates one manifest sample (dims, ternary stack, sorted events).
Sample load_sample(const std::filesystem::path& manifest_dir, const ManifestEntry& e);

}  // namespace evdeblur
