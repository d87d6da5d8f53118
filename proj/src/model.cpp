#include "dram/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dram {

namespace {

struct Extent {
  std::size_t channels, height, width;
  std::size_t flat() const { return channels * height * width; }
};

Extent conv_stack_output(Extent in, const std::vector<ConvLayerSpec>& layers, const char* what) {
  for (const auto& l : layers) {
    if (l.filters == 0 || l.kernel == 0 || l.stride == 0)
      throw std::invalid_argument(std::string(what) + ": conv layer fields must be positive");
    if (l.kernel > in.height + 2 * l.padding || l.kernel > in.width + 2 * l.padding)
      throw std::invalid_argument(std::string(what) + ": kernel larger than its input");
    in = {l.filters, (in.height + 2 * l.padding - l.kernel) / l.stride + 1,
          (in.width + 2 * l.padding - l.kernel) / l.stride + 1};
  }
  return in;
}

Extent glimpse_input(const ModelConfig& cfg) {
  return {2 * cfg.channels, cfg.sensor.patch_size, cfg.sensor.patch_size};
}

Extent context_input(const ModelConfig& cfg) {
  return {cfg.channels, cfg.sensor.context_size, cfg.sensor.context_size};
}

Extent glimpse_features(const ModelConfig& cfg) {
  if (cfg.glimpse_kind == GlimpseNetKind::fully_connected) return glimpse_input(cfg);
  return conv_stack_output(glimpse_input(cfg), cfg.glimpse_conv, "glimpse network");
}

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-limit, limit));
  return t;
}

void add_dense(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(prefix + ".w", glorot({in, out}, in, out, rng));
  ps.add(prefix + ".b", Tensor({out}));
}

void add_conv_stack(ParamSet& ps, const std::string& prefix, std::size_t in_channels,
                    const std::vector<ConvLayerSpec>& layers, Rng& rng) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::size_t area = l.kernel * l.kernel;
    ps.add(prefix + ".conv" + std::to_string(i) + ".k",
           glorot({l.filters, in_channels, l.kernel, l.kernel}, in_channels * area, l.filters * area, rng));
    ps.add(prefix + ".conv" + std::to_string(i) + ".b", Tensor({l.filters}));
    in_channels = l.filters;
  }
}

void add_lstm(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  ps.add(prefix + ".wx", glorot({in, 4 * hidden}, in, 4 * hidden, rng));
  ps.add(prefix + ".wh", glorot({hidden, 4 * hidden}, hidden, 4 * hidden, rng));
  Tensor bias({4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1;
  ps.add(prefix + ".b", std::move(bias));
}

std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t conv_count(std::size_t in_channels, const std::vector<ConvLayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += l.filters * in_channels * l.kernel * l.kernel + l.filters;
    in_channels = l.filters;
  }
  return n;
}

}  // namespace

void ModelConfig::validate() const {
  sensor.validate();
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be at least 2");
  if (channels == 0 || glimpse_dim == 0 || lstm_units == 0 || emission_hidden == 0 ||
      classifier_hidden == 0 || baseline_hidden == 0)
    throw std::invalid_argument("model: layer widths must be positive");
  if (glimpses_per_target == 0 || max_targets == 0)
    throw std::invalid_argument("model: glimpses_per_target and max_targets must be positive");
  if (!sequential && max_targets != 1)
    throw std::invalid_argument("model: single-object models use max_targets = 1");
  if (glimpse_kind == GlimpseNetKind::conv && glimpse_conv.empty())
    throw std::invalid_argument("model: conv glimpse network needs at least one conv layer");
  glimpse_features(*this);
  if (use_context) conv_stack_output(context_input(*this), context_conv, "context network");
}

ParamSet init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet ps;
  const std::size_t g = cfg.glimpse_dim, h = cfg.lstm_units;
  if (cfg.glimpse_kind == GlimpseNetKind::conv)
    add_conv_stack(ps, "image", glimpse_input(cfg).channels, cfg.glimpse_conv, rng);
  add_dense(ps, "image.fc", glimpse_features(cfg).flat(), g, rng);
  add_dense(ps, "loc.fc", 2, g, rng);
  add_lstm(ps, "r1", g, h, rng);
  add_lstm(ps, "r2", h, h, rng);
  add_dense(ps, "emission.hidden", h, cfg.emission_hidden, rng);
  add_dense(ps, "emission.out", cfg.emission_hidden, 2, rng);
  add_dense(ps, "classifier.hidden", h, cfg.classifier_hidden, rng);
  add_dense(ps, "classifier.out", cfg.classifier_hidden, cfg.num_classes, rng);
  add_dense(ps, "baseline.hidden", h, cfg.baseline_hidden, rng);
  add_dense(ps, "baseline.out", cfg.baseline_hidden, 1, rng);
  if (cfg.use_context) {
    add_conv_stack(ps, "context", cfg.channels, cfg.context_conv, rng);
    add_dense(ps, "context.fc", conv_stack_output(context_input(cfg), cfg.context_conv, "context").flat(), h,
              rng);
  }
  return ps;
}

std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t g = cfg.glimpse_dim, h = cfg.lstm_units;
  std::size_t n = 0;
  if (cfg.glimpse_kind == GlimpseNetKind::conv) n += conv_count(2 * cfg.channels, cfg.glimpse_conv);
  n += dense_count(glimpse_features(cfg).flat(), g);
  n += dense_count(2, g);
  n += 4 * h * (g + h + 1);
  n += 4 * h * (h + h + 1);
  n += dense_count(h, cfg.emission_hidden) + dense_count(cfg.emission_hidden, 2);
  n += dense_count(h, cfg.classifier_hidden) + dense_count(cfg.classifier_hidden, cfg.num_classes);
  n += dense_count(h, cfg.baseline_hidden) + dense_count(cfg.baseline_hidden, 1);
  if (cfg.use_context) {
    n += conv_count(cfg.channels, cfg.context_conv);
    n += dense_count(conv_stack_output(context_input(cfg), cfg.context_conv, "context").flat(), h);
  }
  return n;
}

Network::Network(const ModelConfig& cfg, const ParamSet& params, Tape& tape)
    : cfg_(cfg), params_(params), tape_(tape) {}

Var Network::dense(Var x, const std::string& prefix) const {
  return ops::add_bias(ops::matmul(x, tape_.param(params_, prefix + ".w")), tape_.param(params_, prefix + ".b"));
}

Var Network::glimpse(const Tensor& observation, const Tensor& locations) const {
  const std::size_t batch = observation.dim(0);
  Var x = tape_.constant(observation);
  if (cfg_.glimpse_kind == GlimpseNetKind::conv) {
    for (std::size_t i = 0; i < cfg_.glimpse_conv.size(); ++i) {
      const auto& l = cfg_.glimpse_conv[i];
      const std::string name = "image.conv" + std::to_string(i);
      x = ops::relu(ops::add_bias(ops::conv2d(x, tape_.param(params_, name + ".k"), l.stride, l.padding),
                                  tape_.param(params_, name + ".b")));
    }
  }
  x = ops::reshape(x, {batch, x.value().size() / batch});
  Var what = ops::relu(dense(x, "image.fc"));
  Var where = ops::relu(dense(tape_.constant(locations), "loc.fc"));
  return ops::mul(what, where);
}

RecurrentState Network::recurrent(Var g, const RecurrentState& s) const {
  auto l1 = ops::lstm_cell(g, s.h1, s.c1, {p("r1.wx"), p("r1.wh"), p("r1.b")});
  auto l2 = ops::lstm_cell(l1.h, s.h2, s.c2, {p("r2.wx"), p("r2.wh"), p("r2.b")});
  return {l1.h, l1.c, l2.h, l2.c};
}

Var Network::emission(const RecurrentState& s) const {
  return dense(ops::relu(dense(s.h2, "emission.hidden")), "emission.out");
}

RecurrentState Network::zero_state(std::size_t batch) const {
  const Shape shape{batch, cfg_.lstm_units};
  return {tape_.constant(Tensor(shape)), tape_.constant(Tensor(shape)), tape_.constant(Tensor(shape)),
          tape_.constant(Tensor(shape))};
}

RecurrentState Network::context(std::span<const Tensor* const> images) const {
  RecurrentState s = zero_state(images.size());
  if (!cfg_.use_context) return s;
  Var x = tape_.constant(sensor::context_batch(images, cfg_.sensor));
  for (std::size_t i = 0; i < cfg_.context_conv.size(); ++i) {
    const auto& l = cfg_.context_conv[i];
    const std::string name = "context.conv" + std::to_string(i);
    x = ops::relu(ops::add_bias(ops::conv2d(x, tape_.param(params_, name + ".k"), l.stride, l.padding),
                                tape_.param(params_, name + ".b")));
  }
  x = ops::reshape(x, {images.size(), x.value().size() / images.size()});
  s.h2 = ops::tanh(dense(x, "context.fc"));
  return s;
}

Var Network::classify(const RecurrentState& s) const {
  return ops::log_softmax(dense(ops::relu(dense(s.h1, "classifier.hidden")), "classifier.out"));
}

Var Network::baseline(const RecurrentState& s) const {
  Var out = dense(ops::relu(dense(ops::detach(s.h2), "baseline.hidden")), "baseline.out");
  return ops::reshape(out, {out.value().dim(0)});
}

Network::StepOutput Network::step(std::span<const Tensor* const> images, const Tensor& locations,
                                  const RecurrentState& state) const {
  Var g = glimpse(sensor::foveal_batch(images, locations, cfg_.sensor), locations);
  RecurrentState next = recurrent(g, state);
  return {next, emission(next), classify(next), baseline(next)};
}

}  // namespace dram
