#pragma once

#include <array>
#include <string>
#include <vector>

#include "drivecap/video.hpp"

namespace drivecap {

// Signal channel layout in dataset files: always (speed m/s, course degrees).
constexpr size_t kFileSignalChannels = 2;

struct Episode {
  std::string clip_path;  // relative to the dataset root
  std::vector<std::array<double, 2>> signals;  // per raw frame
  std::string narration;
  std::string reasoning;
  std::string scenario;
};

struct Dataset {
  std::string root;
  std::vector<Episode> episodes;

  size_t size() const { return episodes.size(); }
};

const std::vector<std::string>& scenario_names();

struct GenOptions {
  size_t clips = 64;
  uint64_t seed = 1;
  size_t frames = 32;  // raw frames per clip
  size_t size = 64;    // square frame edge, divisible by 32
};

// Renders simple geometric driving scenes (road band, dashed lane line
// scrolling with speed, scenario cue disc, speed/course gauge bars) with
// signal trajectories and caption templates consistent by construction.
// Deterministic per seed; episodes render in parallel workers capped by
// ADAPT_NUM_WORKERS.
Dataset gen_synthetic(const std::string& out_dir, const GenOptions& options);

// JSON-lines manifest, one episode per line; validates every episode
// invariant (schema, clip header geometry, caption presence).
Dataset read_dataset(const std::string& dir);

VideoClip load_clip(const Dataset& dataset, const Episode& episode);
VideoClip read_clip_file(const std::string& path);
void write_clip_file(const std::string& path, const VideoClip& clip);

// Import an externally extracted dataset: per-episode directories of .ppm
// frames plus signals.csv, and a top-level captions.csv. Produces the same
// manifest schema and clip format as the generator.
Dataset import_external(const std::string& src_dir, const std::string& out_dir);

// Minimal binary PPM (P6, maxval 255) support for the import path.
void write_ppm(const std::string& path, size_t height, size_t width,
               const std::vector<float>& rgb);
void read_ppm(const std::string& path, size_t* height, size_t* width, std::vector<float>* rgb);

}  // namespace drivecap
