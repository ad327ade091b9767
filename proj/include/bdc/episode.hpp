#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdc/latents.hpp"

namespace bdc {

// One recorded trajectory of (image, proprio, action) triples. Images are
// stored 8-bit per channel; proprio and actions as 64-bit floats.
struct Episode {
  std::string task;
  std::uint64_t seed = 0;
  int h = 0, w = 0, c = 0;
  int proprio_dim = 0;
  int action_dim = 0;
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::vector<double>> proprio;
  std::vector<std::vector<double>> actions;

  int length() const { return static_cast<int>(actions.size()); }
  Image image_at(int t) const;  // decoded to [0, 1] doubles
};

std::vector<std::uint8_t> quantize_image(const Image& img);
Image dequantize_image(const std::vector<std::uint8_t>& bytes, int h, int w,
                       int c);

void write_episode(const std::string& path, const Episode& ep);
Episode read_episode(const std::string& path);

struct ManifestEntry {
  std::string file;
  std::uint64_t seed = 0;
  bool success = false;
};

struct DatasetManifest {
  std::string task;
  int h = 0, w = 0, c = 0;
  int proprio_dim = 0;
  int action_dim = 0;
  int episode_len = 0;
  int attempts = 0;
  int successes = 0;
  std::vector<ManifestEntry> episodes;
};

void write_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& dir);

std::vector<Episode> load_dataset(const std::string& dir);

// Frames at absolute steps t + s_j for the plan's timestamps; if the episode
// ends before t + s_j, the last recorded frame is repeated.
std::vector<Image> sample_future_frames(const Episode& ep, int t,
                                        const FrameSamplePlan& plan);

}  // namespace bdc
