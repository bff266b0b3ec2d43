#pragma once

// Synthetic dataset generation: seen/unseen splits over the object templates,
// full/partial/rotation views, written in the dataio format.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afford3d/dataio.hpp"

namespace afford3d::synth {

struct DataConfig {
  int train_count = 512;
  int test_count = 128;
  io::View view = io::View::kFull;
  io::SplitMode split = io::SplitMode::kSeen;
  int n_points = 2048;
  int image_size = 64;
  std::vector<std::string> affordances = default_affordances();
  std::vector<std::string> objects = default_objects();
  // Render the image from a different instance of the same class.
  bool shuffle_pairing = false;
  int partial_resolution = 32;
  double partial_tolerance = 0.02;

  void validate() const;
};

using GroupKey = std::pair<std::string, int>;  // (object class, affordance index)

// (object, affordance) groups available to each side of the split, in
// vocabulary order. Throws when either side is empty.
struct SplitPlan {
  std::vector<GroupKey> train;
  std::vector<GroupKey> test;
};
SplitPlan plan_split(const DataConfig& cfg);

// One sample, in memory. `partial_source` receives the partial cloud before
// rotation for rotation-view samples.
io::Sample build_sample(const DataConfig& cfg, const GroupKey& group, const std::string& subset, int index,
                        uint64_t seed, geom::PointCloud* partial_source = nullptr);

// Pads a visible subset back to n points by drawing visible points with
// replacement, then renormalizes. Returns the chosen source indices.
std::vector<int> resample_to(std::span<const int> visible, int n, uint64_t seed);

// Pure function of (cfg, seed). Writes root/manifest.json and every sample.
io::Manifest generate_dataset(const DataConfig& cfg, uint64_t seed, const std::filesystem::path& root);

}  // namespace afford3d::synth
