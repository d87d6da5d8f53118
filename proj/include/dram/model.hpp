#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dram/ops.hpp"
#include "dram/rng.hpp"
#include "dram/sensor.hpp"

namespace dram {

enum class GlimpseNetKind { fully_connected, conv };

struct ConvLayerSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// Architecture of one attention model. For sequential tasks num_classes
/// counts the end-of-sequence class, which is always the last index.
struct ModelConfig {
  std::size_t num_classes = 55;
  bool sequential = false;
  std::size_t channels = 1;
  std::size_t glimpse_dim = 256;  ///< |g|
  std::size_t lstm_units = 512;
  std::size_t emission_hidden = 256;
  std::size_t classifier_hidden = 256;
  std::size_t baseline_hidden = 256;
  GlimpseNetKind glimpse_kind = GlimpseNetKind::fully_connected;
  std::vector<ConvLayerSpec> glimpse_conv;
  std::vector<ConvLayerSpec> context_conv;
  std::size_t glimpses_per_target = 4;  ///< N
  std::size_t max_targets = 1;          ///< S_max
  bool use_context = true;              ///< false zero-initializes h2 ("without context")
  sensor::SensorConfig sensor;

  std::size_t eos_class() const { return num_classes - 1; }
  /// Upper bound on glimpses per decode, N * (S_max + 1) when sequential.
  std::size_t max_glimpses() const {
    return glimpses_per_target * (sequential ? max_targets + 1 : max_targets);
  }
  void validate() const;
};

/// Recurrent state for a batch: h1/c1 feed the classifier, h2/c2 the emission
/// and baseline heads.
struct RecurrentState {
  Var h1, c1, h2, c2;
};

/// Allocates every weight tensor with Glorot-uniform weights, zero biases and
/// forget-gate biases of one.
ParamSet init_params(const ModelConfig& cfg, Rng& rng);

/// Closed-form parameter count, independent of init_params.
std::size_t param_count(const ModelConfig& cfg);

/// The five sub-networks plus the baseline head, bound to one tape and one
/// parameter set. All methods are batched over rows.
class Network {
 public:
  Network(const ModelConfig& cfg, const ParamSet& params, Tape& tape);

  const ModelConfig& config() const { return cfg_; }
  Tape& tape() const { return tape_; }

  /// G_image(obs) * G_loc(locations). obs [B x 2c x p x p], locations [B x 2].
  Var glimpse(const Tensor& observation, const Tensor& locations) const;
  /// Two stacked LSTM layers; layer 1 reads g, layer 2 reads layer 1's new h.
  RecurrentState recurrent(Var g, const RecurrentState& state) const;
  /// Next location mean [B x 2], from h2 only.
  Var emission(const RecurrentState& state) const;
  /// Initial state: h2 from the context network, everything else zero.
  RecurrentState context(std::span<const Tensor* const> images) const;
  /// Log class probabilities [B x K], from h1 only.
  Var classify(const RecurrentState& state) const;
  /// Baseline [B], from a detached copy of h2.
  Var baseline(const RecurrentState& state) const;

  struct StepOutput {
    RecurrentState state;
    Var next_location;
    Var log_probs;
    Var baseline;
  };
  /// Glimpse at `locations`, update the state, evaluate all heads.
  StepOutput step(std::span<const Tensor* const> images, const Tensor& locations,
                  const RecurrentState& state) const;

  /// Zero state for a batch of `batch` rows.
  RecurrentState zero_state(std::size_t batch) const;

 private:
  Var p(const char* name) const { return tape_.param(params_, name); }
  Var dense(Var x, const std::string& prefix) const;

  const ModelConfig& cfg_;
  const ParamSet& params_;
  Tape& tape_;
};

}  // namespace dram
