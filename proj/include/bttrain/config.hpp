#pragma once

// Run configuration read from one JSON file. Every section is optional and
// falls back to the defaults below; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bttrain/bram_planner.hpp"
#include "bttrain/costmodel.hpp"
#include "bttrain/model.hpp"
#include "json.hpp"

namespace bttrain {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SyntheticSpec {
  std::size_t classes = 2;
  std::size_t length = 32;
  std::size_t count = 500;
  std::uint64_t seed = 7;
  std::size_t vocab = 100;
};

struct DataConfig {
  std::string path;                      // JSONL file; empty = synthetic
  SyntheticSpec synthetic;
  bool slots = true;                     // train the slot head when labels exist
};

struct TrainConfig {
  double lr = 4e-3;
  std::size_t batch_size = 1;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 1;               // > 1 runs the BTT chains concurrently
  bool spill_activations = false;
  bool shuffle = true;
};

struct CostConfig {
  std::optional<LayerConfig> layer;      // default: the model's hidden layer at K = batch * seq
  std::uint64_t multiplier = 1;
  std::vector<std::size_t> sweep_K{8, 16, 32, 64, 128, 256, 512};
  std::vector<std::size_t> sweep_rank{1, 2, 4, 8, 12, 16, 24, 32, 48};
};

struct BramConfig {
  BlockSpec spec;
  std::size_t g_max = 8;
  std::uint64_t element_bits = 32;
  std::string manifest;                  // JSON array manifest; empty = model inventory
};

struct GradcheckConfig {
  double h = 1e-5;
  double threshold = 1e-3;
  std::size_t batch = 1;
  std::size_t seq = 4;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  CostConfig costmodel;
  BramConfig bram;
  GradcheckConfig gradcheck;

  LayerConfig cost_layer() const;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& c);

}  // namespace bttrain
