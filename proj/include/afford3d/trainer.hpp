#pragma once

// Optimization: schedule, AdamW, paired training steps, checkpoints and the
// epoch loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "afford3d/config.hpp"
#include "afford3d/dataio.hpp"
#include "afford3d/netblocks.hpp"

namespace afford3d::train {

namespace fs = std::filesystem;
using ad::Mat;

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
double lr_at(int step, double base_lr, int warmup_steps, int total_steps);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  long long t = 0;
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
};

// One decoupled-decay Adam update of every trainable parameter from its
// grad. Throws NonFiniteGradient (leaving everything untouched) when any
// gradient entry is not finite.
void adamw_step(std::span<ad::Parameter* const> params, AdamState& state, double lr, const AdamHyper& hyper);

// ---- data held in memory ----

struct LoadedSample {
  io::Sample sample;
  net::PointGeometry geometry;
  std::vector<int> tokens;
  Mat target;  // (1, N)
};

struct Dataset {
  io::Manifest manifest;
  net::Tokenizer tokenizer;
  std::vector<LoadedSample> train;
  std::vector<LoadedSample> val;
  std::vector<LoadedSample> test;
};

// Text for a sample at the configured granularity.
std::string instruction_text(const io::Sample& s, synth::Granularity g);
// Vocabulary over every granularity of the training instructions.
net::Tokenizer build_tokenizer(std::span<const io::Sample> train);
LoadedSample prepare_sample(io::Sample s, const net::Tokenizer& tok, const RunConfig& cfg);
// Indices of the training pool held out for validation: a val_fraction share
// of every (class, affordance) group, never leaving fewer than pair_count.
std::vector<int> validation_indices(std::span<const io::Sample> train, double fraction, int pair_count, uint64_t seed);
Dataset load_dataset(const fs::path& root, const RunConfig& cfg, const net::Tokenizer* tokenizer = nullptr);

// ---- steps ----

// Zeroes gradients, runs the paired forward in training mode and
// backpropagates sum_p total_loss(pair slice p). Returns the loss.
double accumulate_gradients(net::Model& model, std::span<const net::PairInput> batch,
                            std::span<const Mat> targets, const RunConfig& cfg);

struct TrainState {
  int step = 0;
  AdamState adam;
  double best_val_aiou = -1.0;
  int best_step = -1;
};

// ---- checkpoints ----

struct CheckpointInfo {
  TrainState state;
  std::vector<std::string> vocabulary;
  std::string config_snapshot;
  uint64_t frozen_hash = 0;
};

void save_checkpoint(const fs::path& dir, net::Model& model, const TrainState& state, const net::Tokenizer& tok,
                     const std::string& config_snapshot);
// Restores parameters (shapes must match) and returns the stored state.
CheckpointInfo load_checkpoint(const fs::path& dir, net::Model& model);
CheckpointInfo read_checkpoint_info(const fs::path& dir);

// ---- trainer ----

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct FitResult {
  std::vector<StepRecord> log;
  int total_steps = 0;
  double best_val_aiou = -1.0;
  uint64_t frozen_hash_start = 0;
  uint64_t frozen_hash_end = 0;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::shared_ptr<const Dataset> data);

  net::Model& model() { return *model_; }
  const Dataset& data() const { return *data_; }
  TrainState& state() { return state_; }
  const RunConfig& config() const { return cfg_; }
  int steps_per_epoch() const { return steps_per_epoch_; }
  int total_steps() const { return total_steps_; }

  // Batch consumed at `step`: pool indices of each image and its clouds.
  std::vector<io::PairingItem> batch_for(int step) const;
  // One optimizer step at state().step; returns its record.
  StepRecord step();
  // Mean validation aIoU (falls back to the training pool when empty).
  double validation_aiou();

  void save(const fs::path& dir);
  void load(const fs::path& dir);

  // Runs the remaining steps. With an output directory: appends NDJSON
  // records to train_log.ndjson, saves best/ and last/ and, on divergence,
  // last_good/ before throwing DivergenceError.
  FitResult fit(const fs::path& out_dir, const std::function<void(const StepRecord&)>& on_step = {});

 private:
  RunConfig cfg_;
  std::shared_ptr<const Dataset> data_;
  std::unique_ptr<net::Model> model_;
  std::unique_ptr<io::PairingSampler> sampler_;
  TrainState state_;
  int steps_per_epoch_ = 0;
  int total_steps_ = 0;
  mutable int cached_epoch_ = -1;
  mutable std::vector<io::PairingItem> cached_items_;
};

}  // namespace afford3d::train
