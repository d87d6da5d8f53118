#include "dram/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dram {

namespace {

Scalar log_norm_2d(Scalar sigma) {
  // log of the 2-D isotropic normalizer, 2 * log(sigma * sqrt(2 pi))
  return 2 * std::log(sigma * std::sqrt(2 * std::numbers::pi_v<Scalar>));
}

std::vector<Scalar> row_values(const Tensor& t, std::size_t r) {
  const std::size_t k = t.dim(1);
  return {t.ptr() + r * k, t.ptr() + (r + 1) * k};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0)) throw std::invalid_argument("train: lr must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (!(location_std > 0)) throw std::invalid_argument("train: location_std must be positive");
  if (!(lambda >= 0)) throw std::invalid_argument("train: lambda must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  if (mc_samples < 1) throw std::invalid_argument("train: mc_samples must be at least 1");
}

LocationSample sample_location(sensor::LocationCoord mean, Scalar sigma, Rng& rng) {
  const Scalar zx = static_cast<Scalar>(rng.normal());
  const Scalar zy = static_cast<Scalar>(rng.normal());
  LocationSample s;
  s.location = {mean.x + sigma * zx, mean.y + sigma * zy};
  const Scalar dx = s.location.x - mean.x, dy = s.location.y - mean.y;
  s.log_density = -(dx * dx + dy * dy) / (2 * sigma * sigma) - log_norm_2d(sigma);
  return s;
}

Var location_log_density(Var mean, const Tensor& sample, Scalar sigma) {
  Tape& tape = *mean.tape;
  Var diff = ops::sub(tape.constant(sample), mean);
  Var quad = ops::scale(ops::sum_cols(ops::square(diff)), -1 / (2 * sigma * sigma));
  return ops::add(quad, tape.constant(Tensor({sample.dim(0)}, -log_norm_2d(sigma))));
}

std::size_t argmax(std::span<const Scalar> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

int reward_indicator(std::span<const Scalar> log_probs, std::size_t y) {
  return argmax(log_probs) == y ? 1 : 0;
}

std::vector<Scalar> sequential_reward(std::span<const int> indicators) {
  std::vector<Scalar> out(indicators.size());
  Scalar acc = 0;
  for (std::size_t i = 0; i < indicators.size(); ++i) out[i] = acc += indicators[i];
  return out;
}

std::vector<int> curriculum_mask(std::span<const int> indicators) {
  std::vector<int> mask(indicators.size(), 0);
  for (std::size_t i = 0; i < indicators.size(); ++i) {
    mask[i] = 1;
    if (indicators[i] == 0) break;
  }
  return mask;
}

std::vector<std::size_t> training_targets(std::span<const std::uint8_t> labels, const ModelConfig& cfg) {
  std::vector<std::size_t> t(labels.begin(), labels.end());
  if (cfg.sequential) t.push_back(cfg.eos_class());
  for (auto y : t)
    if (y >= cfg.num_classes) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
  if (t.empty()) throw std::invalid_argument("episode without targets");
  return t;
}

std::pair<EpisodeTrace, EpisodeGraph> unroll_episodes(const Network& net, std::span<const EpisodeSample> batch,
                                                      const EpisodeOptions& opts, std::span<Rng> streams) {
  const ModelConfig& cfg = net.config();
  const std::size_t bsz = batch.size();
  if (bsz == 0) throw std::invalid_argument("empty episode batch");
  if (!opts.replay && streams.size() != bsz) throw std::invalid_argument("one rng stream per episode required");

  EpisodeTrace trace;
  EpisodeGraph graph;
  trace.batch = bsz;
  trace.glimpses_per_target = cfg.glimpses_per_target;
  std::vector<const Tensor*> images(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    images[b] = batch[b].image;
    trace.ids.push_back(batch[b].id);
    trace.targets.push_back(batch[b].targets);
    trace.targets_run = std::max(trace.targets_run, batch[b].targets.size());
  }
  if (opts.replay && opts.replay->steps() != trace.targets_run * cfg.glimpses_per_target)
    throw std::invalid_argument("replay trace does not match the batch");

  RecurrentState state = net.context(images);
  for (std::size_t s = 0; s < trace.targets_run; ++s) {
    for (std::size_t n = 0; n < cfg.glimpses_per_target; ++n) {
      const std::size_t step = s * cfg.glimpses_per_target + n;
      Var mean = net.emission(state);
      Var base = net.baseline(state);
      Tensor sample;
      if (opts.replay) {
        sample = opts.replay->samples[step];
      } else {
        sample = Tensor({bsz, 2});
        const Tensor& m = mean.value();
        for (std::size_t b = 0; b < bsz; ++b) {
          const auto ls = sample_location({m.at(b, 0), m.at(b, 1)}, opts.sigma, streams[b]);
          sample.at(b, 0) = ls.location.x;
          sample.at(b, 1) = ls.location.y;
        }
      }
      Var logd = location_log_density(mean, sample, opts.sigma);
      Var g = net.glimpse(sensor::foveal_batch(images, sample, cfg.sensor), sample);
      state = net.recurrent(g, state);

      trace.means.push_back(mean.value());
      trace.samples.push_back(std::move(sample));
      trace.log_density.push_back(logd.value());
      trace.baselines.push_back(base.value());
      graph.log_density.push_back(logd);
      graph.baselines.push_back(base);
    }
    Var lp = net.classify(state);
    trace.log_probs.push_back(lp.value());
    graph.log_probs.push_back(lp);
  }
  return {std::move(trace), std::move(graph)};
}

EpisodeLoss episode_loss(Tape& tape, const EpisodeGraph& graph, EpisodeTrace& trace, const EpisodeOptions& opts) {
  const std::size_t bsz = trace.batch;
  const std::size_t n_per = trace.glimpses_per_target;
  if (graph.log_probs.size() != trace.targets_run || graph.log_density.size() != trace.steps() ||
      trace.steps() != trace.targets_run * n_per)
    throw std::invalid_argument("episode_loss: incomplete trace");

  const EpisodeTrace* replay = opts.replay;
  trace.indicators.assign(bsz, {});
  trace.active.assign(bsz, {});
  trace.cumulative.assign(bsz, {});
  trace.advantage.assign(bsz, std::vector<Scalar>(trace.steps(), 0));
  for (std::size_t b = 0; b < bsz; ++b) {
    if (replay) {
      trace.indicators[b] = replay->indicators[b];
      trace.active[b] = replay->active[b];
      trace.cumulative[b] = replay->cumulative[b];
      trace.advantage[b] = replay->advantage[b];
      continue;
    }
    const auto& tg = trace.targets[b];
    for (std::size_t s = 0; s < tg.size(); ++s)
      trace.indicators[b].push_back(reward_indicator(row_values(trace.log_probs[s], b), tg[s]));
    trace.active[b] = opts.curriculum ? curriculum_mask(trace.indicators[b])
                                      : std::vector<int>(tg.size(), 1);
    trace.cumulative[b] = sequential_reward(trace.indicators[b]);
    for (std::size_t n = 0; n < trace.steps(); ++n) {
      const std::size_t s = n / n_per;
      if (s < tg.size()) trace.advantage[b][n] = trace.cumulative[b][s] - trace.baselines[n][b];
    }
  }

  auto active = [&](std::size_t b, std::size_t s) -> Scalar {
    return s < trace.targets[b].size() && trace.active[b][s] ? Scalar(1) : Scalar(0);
  };

  Var per = tape.constant(Tensor({bsz}));
  for (std::size_t s = 0; s < trace.targets_run; ++s) {
    std::vector<std::size_t> y(bsz, 0);
    Tensor weight({bsz});
    for (std::size_t b = 0; b < bsz; ++b) {
      if (s < trace.targets[b].size()) y[b] = trace.targets[b][s];
      weight[b] = -active(b, s);
    }
    per = ops::add(per, ops::mul_const(ops::pick(graph.log_probs[s], y), weight));
  }
  for (std::size_t n = 0; n < trace.steps(); ++n) {
    const std::size_t s = n / n_per;
    Tensor reinforce({bsz}), reward({bsz}), half({bsz});
    for (std::size_t b = 0; b < bsz; ++b) {
      const Scalar m = active(b, s);
      reinforce[b] = -opts.lambda * trace.advantage[b][n] * m;
      reward[b] = m > 0 ? trace.cumulative[b][s] : Scalar(0);
      half[b] = Scalar(0.5) * m;
    }
    per = ops::add(per, ops::mul_const(graph.log_density[n], reinforce));
    Var err = ops::sub(graph.baselines[n], tape.constant(std::move(reward)));
    per = ops::add(per, ops::mul_const(ops::square(err), half));
  }
  Var total = ops::scale(ops::sum(per), Scalar(1) / static_cast<Scalar>(bsz));
  return {per, total};
}

EpisodeResult run_episodes(const Network& net, std::span<const EpisodeSample> batch, const EpisodeOptions& opts,
                           std::span<Rng> streams) {
  auto [trace, graph] = unroll_episodes(net, batch, opts, streams);
  EpisodeLoss loss = episode_loss(net.tape(), graph, trace, opts);
  return {std::move(trace), loss};
}

BatchGradient batch_gradient(const ModelConfig& model, const ParamSet& params, std::span<const EpisodeSample> batch,
                             const EpisodeOptions& opts, std::span<Rng> streams) {
  Tape tape;
  Network net(model, params, tape);
  EpisodeResult res = run_episodes(net, batch, opts, streams);
  tape.backward(res.loss.total);
  BatchGradient out;
  out.grads = tape.param_grads(params);
  out.loss = res.loss.total.value()[0];
  out.trace = std::move(res.trace);
  return out;
}

EpochMetrics train_epoch(std::span<const LabeledImage> data, const ModelConfig& model, ParamSet& params,
                         OptimizerState& opt, const TrainConfig& cfg, std::size_t epoch) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  Rng epoch_rng = Rng(cfg.seed).split(epoch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  epoch_rng.shuffle(std::span<std::size_t>(order));

  const EpisodeOptions opts{cfg.location_std, cfg.lambda, true, nullptr};
  const std::size_t m_samples = cfg.mc_samples;
  EpochMetrics metrics;
  metrics.epoch = epoch;
  // lr 0 evaluates the training objective without touching params or optimizer state
  const bool frozen = cfg.lr == 0;
  metrics.lr = frozen ? 0 : opt.learning_rate;
  Scalar loss_sum = 0, reward_sum = 0, error_sum = 0;
  std::size_t episodes = 0;

  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    std::vector<EpisodeSample> batch;
    std::vector<Rng> streams;
    for (std::size_t i = start; i < stop; ++i) {
      const LabeledImage& item = data[order[i]];
      for (std::size_t m = 0; m < m_samples; ++m) {
        batch.push_back({&item.pixels, training_targets(item.labels, model), order[i]});
        streams.push_back(epoch_rng.split(1 + order[i] * m_samples + m));
      }
    }
    BatchGradient bg;
    try {
      bg = batch_gradient(model, params, batch, opts, streams);
      for (std::size_t i = 0; i < bg.grads.size(); ++i) require_finite(bg.grads[i], "gradient");
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "non-finite value in epoch " << epoch << ", batch " << start / cfg.batch_size << " (images";
      for (std::size_t i = start; i < stop; ++i) msg << ' ' << order[i];
      msg << "): " << e.what();
      throw TrainingError(msg.str());
    }
    if (!frozen) nesterov_step(params, bg.grads, opt);

    loss_sum += bg.loss * static_cast<Scalar>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ind = bg.trace.indicators[b];
      const int correct = std::accumulate(ind.begin(), ind.end(), 0);
      reward_sum += static_cast<Scalar>(correct) / static_cast<Scalar>(ind.size());
      error_sum += correct == static_cast<int>(ind.size()) ? 0 : 1;
    }
    episodes += batch.size();
  }
  metrics.loss = loss_sum / static_cast<Scalar>(episodes);
  metrics.reward_rate = reward_sum / static_cast<Scalar>(episodes);
  metrics.seq_error = error_sum / static_cast<Scalar>(episodes);
  if (!frozen) opt.end_epoch();
  return metrics;
}

}  // namespace dram
