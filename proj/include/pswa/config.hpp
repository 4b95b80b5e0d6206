#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pswa/nn.hpp"
#include "pswa/optim.hpp"
#include "pswa/wsample.hpp"

namespace pswa {

enum class DataKind { synthetic, idx, cifar10 };

struct DataConfig {
  DataKind source = DataKind::synthetic;
  // synthetic
  std::size_t train_size = 1000;
  std::size_t test_size = 500;
  std::size_t dims = 10;
  int classes = 4;
  double separation = 3.0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10
  std::vector<std::string> train_files, test_files;
  // all sources
  std::size_t train_limit = 0;  // 0 keeps every sample
  std::size_t test_limit = 0;
  bool standardize = false;  // per-channel statistics of the training split
};

struct OptimizerConfig {
  std::string type = "sgd";  // sgd | adam
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RunConfig {
  int epochs = 1;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: nothing written to disk
  int eval_every = 1;
  bool drop_last = false;
  int checkpoint_every = 0;    // 0: only last.ckpt and final.ckpt
  bool record_timing = false;  // false writes 0 in the CSV timing columns
};

struct TrainingConfig {
  ModelSpec model;
  DataConfig data;
  OptimizerConfig optimizer;
  LRSchedule schedule;
  SamplerConfig sampler;
  RunConfig run;
};

// Parsing rejects unknown keys and validates the result (ConfigError).
TrainingConfig parse_config(const nlohmann::json& doc);
TrainingConfig parse_config_text(const std::string& text);
TrainingConfig load_config(const std::string& path);

void validate(const TrainingConfig& cfg);  // throws ConfigError

// Every field, defaults included, in the schema parse_config accepts.
nlohmann::json to_json(const TrainingConfig& cfg);

// SHA-256 of the canonical JSON with run.output_dir blanked, so the same
// experiment written to two directories hashes equally.
std::array<std::uint8_t, 32> config_hash(const TrainingConfig& cfg);
std::string hex(const std::array<std::uint8_t, 32>& digest);

Optimizer make_optimizer(const OptimizerConfig& cfg, const ParameterSet& params);

}  // namespace pswa
