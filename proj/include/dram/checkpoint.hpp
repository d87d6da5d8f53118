#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "dram/config.hpp"
#include "dram/optimizer.hpp"
#include "dram/rng.hpp"

namespace dram {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training snapshot. Tensors are stored as named little-endian f64 arrays,
/// so save -> load -> save reproduces the file byte for byte.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;  ///< to_text() of the run config
  std::uint64_t config_hash = 0;
  std::uint64_t epoch = 0;  ///< completed epochs
  Rng::State rng;
  ParamSet params;
  OptimizerState optimizer;

  RunConfig config() const { return parse_config_text(config_text); }
};

Checkpoint make_checkpoint(const RunConfig& cfg, std::uint64_t epoch, const Rng& rng, const ParamSet& params,
                           const OptimizerState& opt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Loads a checkpoint. With `expected_hash`, a different architecture hash is
/// rejected unless `allow_mismatch` is set.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {},
                           bool allow_mismatch = false);

}  // namespace dram
