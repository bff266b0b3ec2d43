#pragma once

// Run configuration: flat UTF-8 `key = value` files with dotted namespaces.
// Later assignments win; `model.preset` is applied before every other key
// regardless of where it appears.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afford3d/generate.hpp"
#include "afford3d/losses.hpp"
#include "afford3d/netblocks.hpp"
#include "afford3d/synthgen.hpp"

namespace afford3d {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.06;
  int warmup_steps = 100;
  int epochs = 20;
  int batch_size = 4;
  int pair_count = 2;
  // Stop after this many steps when > 0; the schedule spans the shorter run.
  int max_steps = 0;
  double val_fraction = 0.1;
  bool image_on = true;
  synth::Granularity granularity = synth::Granularity::kFull;
  bool resume = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

enum class Predictor { kModel, kOracle, kConstant };

struct EvalConfig {
  Predictor predictor = Predictor::kModel;
  double constant = 0.5;
  std::string subset = "test";
  std::string checkpoint;  // empty: <out>/best
  int batch_size = 8;
};

struct RunConfig {
  uint64_t seed = 0;
  std::string preset = "default";
  std::string data_root = "data";
  synth::DataConfig data;
  net::ModelConfig model;
  TrainConfig train;
  loss::LossConfig loss;
  EvalConfig eval;

  // Applies one assignment; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Checks ranges and cross-field consistency; copies data dimensions into
  // the model config.
  void validate();
  // Every key with its current value, one `key = value` per line.
  std::string snapshot() const;
  static std::vector<std::string> keys();
};

std::vector<std::pair<std::string, std::string>> parse_assignments(const std::string& text);
std::pair<std::string, std::string> parse_override(const std::string& assignment);

// Builds a config from an optional file plus overrides (applied last).
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);
RunConfig config_from_assignments(std::vector<std::pair<std::string, std::string>> assignments);

void apply_preset(RunConfig& cfg, const std::string& name);

std::string to_string(Predictor p);

}  // namespace afford3d
