#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dram/model.hpp"

namespace dram {

enum class Termination { eos, max_length };

struct SequencePrediction {
  std::vector<std::size_t> labels;  ///< EOS excluded
  std::vector<Tensor> log_probs;    ///< per label position, [K]
  std::vector<sensor::LocationCoord> trajectory;  ///< every glimpse location used
  std::vector<std::size_t> prediction_steps;      ///< glimpse index after which each slot was classified
  std::vector<std::size_t> slot_predictions;      ///< raw argmax of every classified slot, EOS included
  std::vector<Tensor> slot_log_probs;             ///< log-probs of every classified slot
  Termination terminated_by = Termination::max_length;
};

struct DecodeOptions {
  /// Sampling std for stochastic decodes; nullopt feeds the emission means.
  std::optional<Scalar> sigma;
};

/// Decodes a batch: N glimpses per slot, classify, stop on EOS or after
/// S_max labels. With a sigma, row b samples from streams[b].
std::vector<SequencePrediction> decode_batch(std::span<const Tensor* const> images, const ParamSet& params,
                                             const ModelConfig& cfg, const DecodeOptions& opts,
                                             std::span<Rng> streams = {});

SequencePrediction deterministic_decode(const Tensor& image, const ParamSet& params, const ModelConfig& cfg);

/// M stochastic decodes averaged per position in log space, renormalized,
/// truncated to the shortest sample. Row m of image i uses rng.split(m).
SequencePrediction mc_average_predict(const Tensor& image, const ParamSet& params, const ModelConfig& cfg,
                                      std::size_t m_samples, Scalar sigma, Rng& rng);

/// Averages per-position log-prob vectors and renormalizes them in
/// probability space.
Tensor average_log_probs(std::span<const Tensor> log_probs);

/// Combines a left-to-right prediction with a right-to-left one: the first k
/// backward positions (k = shorter length) are flipped into forward order
/// and averaged with the forward positions.
SequencePrediction forward_backward_merge(const SequencePrediction& fwd, const SequencePrediction& bwd,
                                          std::optional<std::size_t> eos_class = std::nullopt);

struct FocusResult {
  SequencePrediction first_pass;
  SequencePrediction refined;
  sensor::PixelCoord centroid;
  Tensor crop;
};

/// Decodes the large image, crops crop_h x crop_w around the centroid of the
/// first-pass glimpse centers and decodes the crop.
FocusResult focus_refine(const Tensor& large_image, const ParamSet& params, const ModelConfig& cfg,
                         std::size_t crop_h, std::size_t crop_w);

/// Zero-padded crop of a [c x h x w] image centered at `center`.
Tensor crop_centered(const Tensor& image, sensor::PixelCoord center, std::size_t crop_h, std::size_t crop_w);

}  // namespace dram
