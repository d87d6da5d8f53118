#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dram/estimator.hpp"
#include "dram/kernels.hpp"
#include "support.hpp"

using namespace dram;
using testing::random_tensor;

namespace {

ParamSet smooth_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p = init_params(cfg, rng);
  for (const char* b : {"image.fc.b", "loc.fc.b", "emission.hidden.b", "classifier.hidden.b", "baseline.hidden.b"})
    p.at(b).fill(0.2);
  return p;
}

std::vector<LabeledImage> random_images(std::size_t count, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledImage li;
    li.pixels = random_tensor({1, 40, 40}, rng, 0, 1);
    li.labels = {static_cast<std::uint8_t>(rng.below(classes))};
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace

TEST_CASE("sample_location") {
  Rng rng(1);
  const auto tiny = sample_location({0.3, -0.2}, 1e-9, rng);
  CHECK(std::abs(tiny.location.x - 0.3) < 1e-7);
  CHECK(std::abs(tiny.location.y + 0.2) < 1e-7);

  const int n = 100000;
  double sx = 0, sy = 0;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_location({0.3, -0.2}, 0.03, rng);
    sx += s.location.x;
    sy += s.location.y;
    const double dx = s.location.x - 0.3, dy = s.location.y + 0.2;
    const double expected = -(dx * dx + dy * dy) / (2 * 0.03 * 0.03) - 2 * std::log(0.03 * std::sqrt(2 * std::numbers::pi));
    if (std::abs(s.log_density - expected) > 1e-9) FAIL("log density off at sample " << i);
  }
  const double bound = 3 * 0.03 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(sx / n - 0.3) <= bound);
  CHECK(std::abs(sy / n + 0.2) <= bound);
}

TEST_CASE("location_log_density value and gradient") {
  Tape tape;
  Var mean = tape.variable(Tensor({2, 2}, {0.1, 0.2, -0.5, 0.4}));
  const Tensor sample({2, 2}, {0.1, 0.2, -0.47, 0.36});
  Var logd = location_log_density(mean, sample, 0.03);
  const double at_mean = -2 * std::log(0.03 * std::sqrt(2 * std::numbers::pi));
  CHECK(std::abs(at_mean - 5.17524) < 1e-5);
  CHECK(std::abs(logd.value()[0] - at_mean) < 1e-12);
  tape.backward(ops::sum(logd));
  const Tensor g = tape.grad(mean);
  CHECK(g[0] == 0);
  CHECK(g[2] == doctest::Approx(0.03 / (0.03 * 0.03)));
  CHECK(g[3] == doctest::Approx(-0.04 / (0.03 * 0.03)));
}

TEST_CASE("reward indicator and argmax tie-break") {
  const std::vector<Scalar> peaked = {-3, -0.1, -4};
  CHECK(reward_indicator(peaked, 1) == 1);
  CHECK(reward_indicator(peaked, 2) == 0);
  const std::vector<Scalar> tie = {-1, -2, -1};
  CHECK(argmax(tie) == 0);
  CHECK(reward_indicator(tie, 2) == 0);
  CHECK(reward_indicator(tie, 0) == 1);
}

TEST_CASE("cumulative reward") {
  using V = std::vector<Scalar>;
  CHECK(sequential_reward(std::vector<int>{1, 1, 0}) == V{1, 2, 2});
  CHECK(sequential_reward(std::vector<int>{0, 0, 0}) == V{0, 0, 0});
  CHECK(sequential_reward(std::vector<int>{1, 1, 1, 1, 1}) == V{1, 2, 3, 4, 5});
}

TEST_CASE("curriculum mask") {
  using V = std::vector<int>;
  CHECK(curriculum_mask(V{1, 0, 1}) == V{1, 1, 0});
  CHECK(curriculum_mask(V{0, 1, 1, 1}) == V{1, 0, 0, 0});
  CHECK(curriculum_mask(V{1, 1, 1}) == V{1, 1, 1});
}

TEST_CASE("training targets") {
  ModelConfig seq = testing::tiny_model(true, 11);
  const std::vector<std::uint8_t> labels = {4, 2};
  CHECK(training_targets(labels, seq) == std::vector<std::size_t>{4, 2, 10});
  CHECK(training_targets(std::vector<std::uint8_t>{}, seq) == std::vector<std::size_t>{10});
  const ModelConfig single = testing::tiny_model();
  CHECK(training_targets(std::vector<std::uint8_t>{3}, single) == std::vector<std::size_t>{3});
  CHECK_THROWS(training_targets(std::vector<std::uint8_t>{7}, single));
}

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  TrainConfig c;
  c.location_std = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.lambda = -1;
  CHECK_THROWS(c.validate());
  c = {};
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("episode structure") {
  const ModelConfig cfg = testing::tiny_model(true, 11);
  const ParamSet p = smooth_params(cfg, 2);
  Rng rng(3);
  const Tensor a = random_tensor({1, 40, 40}, rng, 0, 1), b = random_tensor({1, 40, 40}, rng, 0, 1);
  const std::vector<EpisodeSample> batch = {{&a, {3, 1, 10}, 0}, {&b, {10}, 1}};
  std::vector<Rng> streams = {rng.split(1), rng.split(2)};
  Tape tape;
  Network net(cfg, p, tape);
  const auto res = run_episodes(net, batch, {0.03, 1.0, true, nullptr}, streams);
  const EpisodeTrace& t = res.trace;
  CHECK(t.steps() == 3 * cfg.glimpses_per_target);
  CHECK(t.log_probs.size() == 3);
  CHECK(t.indicators[1].size() == 1);
  for (const auto& ld : t.log_density) CHECK(ld.all_finite());
  for (std::size_t n = 0; n < t.steps(); ++n) {
    CHECK(t.samples[n].shape() == Shape{2, 2});
    // the second episode owns only the first target, later steps carry no advantage
    if (n >= cfg.glimpses_per_target) CHECK(t.advantage[1][n] == 0);
  }
  CHECK_THROWS(run_episodes(net, batch, {0.03, 1.0, true, nullptr}, std::span<Rng>(streams.data(), 1)));
}

TEST_CASE("surrogate gradient matches finite differences under replay") {
  const ModelConfig cfg = testing::tiny_model(true, 11);
  ParamSet p = smooth_params(cfg, 4);
  Rng rng(5);
  const Tensor a = random_tensor({1, 40, 40}, rng, 0, 1), b = random_tensor({1, 40, 40}, rng, 0, 1);
  const std::vector<EpisodeSample> batch = {{&a, {3, 1, 10}, 0}, {&b, {2, 10}, 1}};
  std::vector<Rng> streams = {rng.split(1), rng.split(2)};
  EpisodeOptions opts{0.3, 0.7, true, nullptr};
  const BatchGradient first = batch_gradient(cfg, p, batch, opts, streams);
  opts.replay = &first.trace;
  const BatchGradient replayed = batch_gradient(cfg, p, batch, opts, {});
  CHECK(replayed.loss == first.loss);
  CHECK(replayed.grads == first.grads);

  // The baseline reads a detached h2: the regression term is checked on the
  // baseline head only and removed from the loss seen by every other weight.
  auto loss = [&](bool keep_regression) {
    Tape tape(false);
    Network net(cfg, p, tape);
    const auto r = run_episodes(net, batch, opts, {});
    double total = r.loss.total.value()[0];
    if (!keep_regression)
      for (std::size_t e = 0; e < batch.size(); ++e)
        for (std::size_t n = 0; n < r.trace.steps(); ++n) {
          const std::size_t s = n / cfg.glimpses_per_target;
          if (s >= r.trace.targets[e].size() || !r.trace.active[e][s]) continue;
          const double d = r.trace.baselines[n][e] - r.trace.cumulative[e][s];
          total -= 0.5 * d * d / static_cast<double>(batch.size());
        }
    return total;
  };
  for (bool head : {false, true}) {
    ParamSet subset, analytic;
    for (std::size_t i = 0; i < p.size(); ++i)
      if ((p.name(i).rfind("baseline.", 0) == 0) == head) {
        subset.add(p.name(i), p[i]);
        analytic.add(p.name(i), replayed.grads[i]);
      }
    const auto res = testing::check_gradients(subset, analytic, [&] {
      for (std::size_t i = 0; i < subset.size(); ++i) p.at(subset.name(i)) = subset[i];
      return loss(head);
    });
    for (std::size_t i = 0; i < subset.size(); ++i) p.at(subset.name(i)) = subset[i];
    INFO(res.worst);
    CHECK(res.checked > 0);
    CHECK(res.max_rel <= 1e-4);
  }
}

TEST_CASE("lambda zero leaves only the supervised and baseline terms") {
  const ModelConfig cfg = testing::tiny_model(true, 11);
  const ParamSet p = smooth_params(cfg, 6);
  Rng rng(7);
  const Tensor a = random_tensor({1, 40, 40}, rng, 0, 1);
  const std::vector<EpisodeSample> batch = {{&a, {3, 1, 10}, 0}};
  std::vector<Rng> streams = {rng.split(1)};
  const BatchGradient ref = batch_gradient(cfg, p, batch, {0.03, 1.0, false, nullptr}, streams);

  EpisodeOptions zero_lambda{0.03, 0.0, false, &ref.trace};
  const BatchGradient g0 = batch_gradient(cfg, p, batch, zero_lambda, {});

  // hand-built cross-entropy through the same sampled path
  Tape tape;
  Network net(cfg, p, tape);
  auto [trace, graph] = unroll_episodes(net, batch, zero_lambda, {});
  Var ce = tape.constant(Tensor({1}));
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t y[1] = {batch[0].targets[s]};
    ce = ops::sub(ce, ops::pick(graph.log_probs[s], y));
  }
  tape.backward(ops::sum(ce));
  const ParamSet g_ce = tape.param_grads(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.name(i).rfind("baseline.", 0) == 0) continue;
    INFO(p.name(i));
    for (std::size_t j = 0; j < p[i].size(); ++j) CHECK(g0.grads[i][j] == doctest::Approx(g_ce[i][j]).epsilon(1e-10));
  }

  // an advantage of exactly zero gives the same gradient as lambda 0
  EpisodeTrace centered = ref.trace;
  for (auto& row : centered.advantage) std::fill(row.begin(), row.end(), 0);
  const BatchGradient gc = batch_gradient(cfg, p, batch, {0.03, 1.0, false, &centered}, {});
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).rfind("baseline.", 0) != 0) CHECK(gc.grads[i] == g0.grads[i]);
}

TEST_CASE("curriculum cuts gradients after the first mistake") {
  const ModelConfig cfg = testing::tiny_model(true, 11);
  const ParamSet p = smooth_params(cfg, 8);
  Rng rng(9);
  const Tensor a = random_tensor({1, 40, 40}, rng, 0, 1);
  const std::vector<EpisodeSample> batch = {{&a, {3, 1, 10}, 0}};
  std::vector<Rng> streams = {rng.split(1)};
  EpisodeTrace forced = batch_gradient(cfg, p, batch, {0.03, 1.0, true, nullptr}, streams).trace;
  forced.indicators[0] = {1, 0, 1};
  forced.active[0] = curriculum_mask(forced.indicators[0]);
  forced.cumulative[0] = sequential_reward(forced.indicators[0]);
  REQUIRE(forced.active[0] == std::vector<int>{1, 1, 0});

  Tape tape;
  Network net(cfg, p, tape);
  const EpisodeOptions opts{0.03, 1.0, true, &forced};
  auto [trace, graph] = unroll_episodes(net, batch, opts, {});
  tape.backward(episode_loss(tape, graph, trace, opts).total);
  const std::size_t n_per = cfg.glimpses_per_target;
  for (std::size_t n = 0; n < trace.steps(); ++n) {
    const bool cut = n / n_per == 2;
    CHECK((tape.grad(graph.log_density[n]) == Tensor({1})) == cut);
    CHECK((tape.grad(graph.baselines[n]) == Tensor({1})) == cut);
  }
  CHECK(tape.grad(graph.log_probs[2]) == Tensor({1, 11}));
  CHECK(tape.grad(graph.log_probs[1]) != Tensor({1, 11}));
}

TEST_CASE("rewards are never differentiated") {
  const ModelConfig cfg = testing::tiny_model();
  const ParamSet p = smooth_params(cfg, 10);
  Rng rng(11);
  const Tensor a = random_tensor({1, 40, 40}, rng, 0, 1);
  const std::vector<EpisodeSample> batch = {{&a, {2}, 0}};
  std::vector<Rng> streams = {rng.split(1)};
  const BatchGradient ref = batch_gradient(cfg, p, batch, {0.03, 1.0, true, nullptr}, streams);
  const BatchGradient g_on = batch_gradient(cfg, p, batch, {0.03, 5.0, true, &ref.trace}, {});
  const BatchGradient g_off = batch_gradient(cfg, p, batch, {0.03, 0.0, true, &ref.trace}, {});
  for (const char* name : {"classifier.hidden.w", "classifier.hidden.b", "classifier.out.w", "classifier.out.b"})
    CHECK(g_on.grads.at(name) == g_off.grads.at(name));
  CHECK(g_on.grads.at("emission.out.w") != g_off.grads.at("emission.out.w"));
}

TEST_CASE("hybrid estimator is unbiased on a one-glimpse toy") {
  // Toy: 1-D location l ~ N(a, s^2), two classes with logits (c l + d, 0),
  // target class 0. Reward is the detached log-likelihood, so the estimator's
  // expectation is the gradient of sum_l p(l) log p(y | l).
  const double s = 0.5, lambda = 1.0;
  Tensor w({3}, {0.2, 1.5, -0.3});  // a, c, d
  auto log_py = [](double l, double c, double d) {
    const double z = c * l + d;
    return z - std::log(std::exp(z) + 1);
  };

  Rng rng(12);
  const int samples = 100000;
  double acc[3] = {0, 0, 0};
  for (int i = 0; i < samples; ++i) {
    Tape tape;
    Var wv = tape.variable(w);
    Var mean = ops::concat_cols(ops::reshape(ops::slice_cols(ops::reshape(wv, {1, 3}), 0, 1), {1, 1}),
                                tape.constant(Tensor({1, 1})));
    const auto draw = sample_location({w[0], 0}, s, rng);
    const Tensor loc({1, 2}, {draw.location.x, 0});
    Var logd = location_log_density(mean, loc, s);
    Var c = ops::slice_cols(ops::reshape(wv, {1, 3}), 1, 1), d = ops::slice_cols(ops::reshape(wv, {1, 3}), 2, 1);
    Var logit = ops::add(ops::mul_const(c, Tensor({1, 1}, {draw.location.x})), d);
    Var logits = ops::concat_cols(logit, tape.constant(Tensor({1, 1})));
    const std::size_t y[1] = {0};
    Var lp = ops::pick(ops::log_softmax(logits), y);
    const double reward = lp.value()[0];
    Var loss = ops::sub(ops::scale(lp, -1), ops::scale(logd, lambda * reward));
    tape.backward(ops::sum(loss));
    const Tensor g = tape.grad(wv);
    for (int k = 0; k < 3; ++k) acc[k] -= g[k];
  }

  // quadrature of d/dW sum_l p(l) log p(y | l) on a fine grid
  double quad[3] = {0, 0, 0};
  const double lo = w[0] - 10 * s, hi = w[0] + 10 * s, h = (hi - lo) / 20000;
  for (int i = 0; i <= 20000; ++i) {
    const double l = lo + i * h, wt = (i == 0 || i == 20000) ? 0.5 : 1;
    const double z = (l - w[0]) / s;
    const double pl = std::exp(-0.5 * z * z) / (s * std::sqrt(2 * std::numbers::pi));
    const double lpy = log_py(l, w[1], w[2]);
    const double sig = 1 / (1 + std::exp(w[1] * l + w[2]));  // 1 - p(y | l)
    quad[0] += wt * h * pl * lpy * (l - w[0]) / (s * s);
    quad[1] += wt * h * pl * sig * l;
    quad[2] += wt * h * pl * sig;
  }
  for (int k = 0; k < 3; ++k) {
    INFO("component " << k << " estimate " << acc[k] / samples << " quadrature " << quad[k]);
    CHECK(std::abs(acc[k] / samples - quad[k]) <= 0.05 * std::abs(quad[k]));
  }
}

TEST_CASE("baseline centers the reward on a frozen policy") {
  const ModelConfig cfg = testing::tiny_model();
  ParamSet p = smooth_params(cfg, 13);
  const auto data = random_images(64, cfg.num_classes, 14);
  auto batch_for = [&](std::size_t start, std::size_t count) {
    std::vector<EpisodeSample> b;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& item = data[(start + i) % data.size()];
      b.push_back({&item.pixels, training_targets(item.labels, cfg), (start + i) % data.size()});
    }
    return b;
  };
  auto opt = OptimizerState::for_params(p, 0.05, 0.9, 1.0);
  Rng rng(15);
  for (std::size_t it = 0; it < 300; ++it) {
    const auto batch = batch_for(it * 32, 32);
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < batch.size(); ++i) streams.push_back(rng.split(it * 64 + i));
    BatchGradient bg = batch_gradient(cfg, p, batch, {0.03, 1.0, true, nullptr}, streams);
    for (std::size_t i = 0; i < bg.grads.size(); ++i)
      if (p.name(i).rfind("baseline.", 0) != 0) bg.grads[i].fill(0);
    nesterov_step(p, bg.grads, opt);
  }
  double adv = 0;
  std::size_t count = 0;
  for (std::size_t it = 0; it < 100; ++it) {
    const auto batch = batch_for(it * 64, 64);
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < batch.size(); ++i) streams.push_back(rng.split(1000000 + it * 64 + i));
    const auto bg = batch_gradient(cfg, p, batch, {0.03, 1.0, true, nullptr}, streams);
    for (const auto& row : bg.trace.advantage)
      for (Scalar v : row) {
        adv += v;
        ++count;
      }
  }
  CHECK(std::abs(adv / static_cast<double>(count)) <= 0.02);
}

TEST_CASE("train_epoch") {
  const ModelConfig cfg = testing::tiny_model();
  const auto data = random_images(40, cfg.num_classes, 16);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.seed = 17;
  kernels::set_serial(true);
  auto run = [&](Scalar lr) {
    Rng rng(18);
    ParamSet p = init_params(cfg, rng);
    auto opt = OptimizerState::for_params(p, 0.01, 0.9, 0.97);
    TrainConfig c = tc;
    c.lr = lr;
    const EpochMetrics m = train_epoch(data, cfg, p, opt, c, 0);
    return std::make_tuple(m.loss, m.reward_rate, m.seq_error, m.lr, p, opt.learning_rate);
  };
  const auto a = run(0.01), b = run(0.01);
  CHECK(a == b);
  CHECK(std::get<5>(a) == doctest::Approx(0.01 * 0.97));

  Rng rng(18);
  const ParamSet initial = init_params(cfg, rng);
  const auto frozen = run(0);
  CHECK(std::get<4>(frozen) == initial);
  CHECK(std::isfinite(std::get<0>(frozen)));
  CHECK(std::get<2>(frozen) >= 0);
  CHECK(std::get<3>(frozen) == 0);
  CHECK(std::get<5>(frozen) == 0.01);
  kernels::set_serial(false);

  CHECK_THROWS(train_epoch(std::span<const LabeledImage>{}, cfg, *const_cast<ParamSet*>(&initial),
                           *std::make_unique<OptimizerState>(OptimizerState::for_params(initial, 0.01, 0.9, 0.97)),
                           tc, 0));
}

TEST_CASE("non-finite loss aborts training with the image ids") {
  const ModelConfig cfg = testing::tiny_model();
  auto data = random_images(4, cfg.num_classes, 19);
  for (auto& v : data[2].pixels.data()) v = std::numeric_limits<Scalar>::quiet_NaN();
  Rng rng(20);
  ParamSet p = init_params(cfg, rng);
  auto opt = OptimizerState::for_params(p, 0.01, 0.9, 0.97);
  TrainConfig tc;
  tc.batch_size = 4;
  try {
    train_epoch(data, cfg, p, opt, tc, 3);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 3") != std::string::npos);
    CHECK(msg.find(" 2") != std::string::npos);
  }
}
