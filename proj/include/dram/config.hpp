#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dram/datasets.hpp"
#include "dram/estimator.hpp"
#include "dram/model.hpp"

namespace dram {

/// Bad configuration: unknown key, type mismatch or missing required key.
/// The message starts with the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything one experiment needs: task, data, model and optimizer settings.
struct RunConfig {
  Task task = Task::pairs;
  ModelConfig model;
  TrainConfig train;

  std::string mnist_dir = "data/mnist";
  std::size_t train_count = 10000;
  std::size_t test_count = 10000;
  std::uint64_t data_seed = 1;
  std::size_t canvas_h = 100, canvas_w = 100;
  bool reversed = false;
  std::size_t checkpoint_every = 5;
  std::size_t eval_every = 0;  ///< test-split evaluation period in epochs, 0 = never
  std::string train_data;  ///< optional pre-generated dataset files
  std::string test_data;

  GeneratorSpec generator(std::uint64_t seed) const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Defaults for a task before any file or override is applied.
RunConfig task_preset(Task task);

/// Parses flat `key = value` text ('#' starts a comment). The task comes from
/// the overrides, then the text; it selects the preset the remaining keys
/// modify. Overrides are applied last.
RunConfig parse_config_text(const std::string& text, const Overrides& overrides = {});
RunConfig parse_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Fully resolved config, every key in a fixed order. Parsing it back gives
/// the same config.
std::string to_text(const RunConfig& cfg);

/// Every key parse_config accepts.
std::vector<std::string> config_keys();

/// FNV-1a over the architecture keys, so checkpoints can detect a model
/// mismatch while still allowing optimizer settings to change on resume.
std::uint64_t config_hash(const RunConfig& cfg);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace dram
