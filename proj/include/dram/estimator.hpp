#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dram/datasets.hpp"
#include "dram/model.hpp"
#include "dram/optimizer.hpp"

namespace dram {

struct TrainConfig {
  Scalar lr = 0.01;
  Scalar lr_decay = 0.97;
  Scalar momentum = 0.9;
  std::size_t batch_size = 128;
  Scalar location_std = 0.03;  ///< sigma, Sigma = sigma^2 I
  Scalar lambda = 1.0;         ///< scale of the reinforcement term
  std::size_t mc_samples = 1;  ///< M location samples per image in the gradient
  std::size_t epochs = 30;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Non-finite loss during training, with where it happened.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -- location policy --------------------------------------------------------

struct LocationSample {
  sensor::LocationCoord location;
  Scalar log_density = 0;
};

/// l~ = l^ + sigma z with z ~ N(0, I); log N(l~; l^, sigma^2 I).
LocationSample sample_location(sensor::LocationCoord mean, Scalar sigma, Rng& rng);

/// log N(sample; mean, sigma^2 I) per row, differentiable in `mean` ([B x 2]).
Var location_log_density(Var mean, const Tensor& sample, Scalar sigma);

// -- rewards ----------------------------------------------------------------

/// Argmax with ties resolved to the lowest class index.
std::size_t argmax(std::span<const Scalar> values);
/// 1 iff argmax(log_probs) == y.
int reward_indicator(std::span<const Scalar> log_probs, std::size_t y);
/// Prefix sums R_s = sum_{j <= s} R_j.
std::vector<Scalar> sequential_reward(std::span<const int> indicators);
/// 1 for targets up to and including the first mistake, 0 after.
std::vector<int> curriculum_mask(std::span<const int> indicators);

// -- episodes ---------------------------------------------------------------

/// One image plus the target sequence it is trained against (EOS appended for
/// sequential models).
struct EpisodeSample {
  const Tensor* image = nullptr;
  std::vector<std::size_t> targets;
  std::uint64_t id = 0;
};

std::vector<std::size_t> training_targets(std::span<const std::uint8_t> labels, const ModelConfig& cfg);

/// Values recorded while unrolling a batch of episodes. Step n belongs to
/// target n / N.
struct EpisodeTrace {
  std::size_t batch = 0;
  std::size_t targets_run = 0;
  std::size_t glimpses_per_target = 0;
  std::vector<std::uint64_t> ids;
  std::vector<std::vector<std::size_t>> targets;  ///< per sample
  std::vector<Tensor> means;        ///< per step, [B x 2] emission means
  std::vector<Tensor> samples;      ///< per step, [B x 2] sampled locations
  std::vector<Tensor> log_density;  ///< per step, [B]
  std::vector<Tensor> baselines;    ///< per step, [B]
  std::vector<Tensor> log_probs;    ///< per target, [B x K]
  // Filled by episode_loss:
  std::vector<std::vector<int>> indicators;      ///< per sample, per own target
  std::vector<std::vector<int>> active;          ///< curriculum mask
  std::vector<std::vector<Scalar>> cumulative;   ///< R_s
  std::vector<std::vector<Scalar>> advantage;    ///< per sample, per step: detached R_s - b_n

  std::size_t steps() const { return means.size(); }
};

/// Graph handles matching the trace, valid while the tape lives.
struct EpisodeGraph {
  std::vector<Var> log_density;
  std::vector<Var> baselines;
  std::vector<Var> log_probs;
};

struct EpisodeOptions {
  Scalar sigma = 0.03;
  Scalar lambda = 1.0;
  bool curriculum = true;
  /// Replays sampled locations and detached coefficients from a previous
  /// trace instead of drawing new ones. Used for finite-difference checks.
  const EpisodeTrace* replay = nullptr;
};

struct EpisodeLoss {
  Var per_episode;  ///< [B]
  Var total;        ///< [1], mean over the batch
};

/// Unrolls N glimpses per target for every sample. Without replay, row b
/// draws its location noise from streams[b].
std::pair<EpisodeTrace, EpisodeGraph> unroll_episodes(const Network& net, std::span<const EpisodeSample> batch,
                                                      const EpisodeOptions& opts, std::span<Rng> streams);

/// Surrogate loss whose gradient is the negated hybrid estimator:
///   sum_active -log p(y_s) - lambda * detach(R_s - b_n) * log p(l~_n)
///   + 1/2 (b_n - detach(R_s))^2
/// Also fills the reward fields of `trace`.
EpisodeLoss episode_loss(Tape& tape, const EpisodeGraph& graph, EpisodeTrace& trace, const EpisodeOptions& opts);

struct EpisodeResult {
  EpisodeTrace trace;
  EpisodeLoss loss;
};

EpisodeResult run_episodes(const Network& net, std::span<const EpisodeSample> batch, const EpisodeOptions& opts,
                           std::span<Rng> streams);

// -- training ---------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  Scalar loss = 0;
  Scalar reward_rate = 0;  ///< mean fraction of correct targets
  Scalar seq_error = 0;    ///< fraction of episodes with any wrong target
  Scalar lr = 0;           ///< learning rate used during the epoch
};

/// Batch gradient of the mean surrogate loss at `params`.
struct BatchGradient {
  ParamSet grads;
  Scalar loss = 0;
  EpisodeTrace trace;
};
BatchGradient batch_gradient(const ModelConfig& model, const ParamSet& params, std::span<const EpisodeSample> batch,
                             const EpisodeOptions& opts, std::span<Rng> streams);

/// One pass over `data` in a seeded shuffled order: per mini-batch, runs the
/// episodes (M location samples per image), averages gradients and takes a
/// Nesterov step. Decays the learning rate at the end.
EpochMetrics train_epoch(std::span<const LabeledImage> data, const ModelConfig& model, ParamSet& params,
                         OptimizerState& opt, const TrainConfig& cfg, std::size_t epoch);

}  // namespace dram
