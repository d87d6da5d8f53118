#include "dram/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dram/estimator.hpp"

namespace dram {

std::vector<SequencePrediction> decode_batch(std::span<const Tensor* const> images, const ParamSet& params,
                                             const ModelConfig& cfg, const DecodeOptions& opts,
                                             std::span<Rng> streams) {
  const std::size_t bsz = images.size();
  if (bsz == 0) return {};
  if (opts.sigma && streams.size() != bsz) throw std::invalid_argument("decode: one rng stream per image required");

  Tape tape(false);
  Network net(cfg, params, tape);
  std::vector<SequencePrediction> out(bsz);
  std::vector<bool> done(bsz, false);
  std::size_t remaining = bsz;
  const std::size_t slots = cfg.sequential ? cfg.max_targets + 1 : 1;

  RecurrentState state = net.context(images);
  for (std::size_t s = 0; s < slots && remaining > 0; ++s) {
    for (std::size_t n = 0; n < cfg.glimpses_per_target; ++n) {
      Tensor loc = net.emission(state).value();
      for (std::size_t b = 0; b < bsz; ++b) {
        if (opts.sigma) {
          const auto ls = sample_location({loc.at(b, 0), loc.at(b, 1)}, *opts.sigma, streams[b]);
          loc.at(b, 0) = ls.location.x;
          loc.at(b, 1) = ls.location.y;
        }
        if (!done[b]) out[b].trajectory.push_back({loc.at(b, 0), loc.at(b, 1)});
      }
      state = net.recurrent(net.glimpse(sensor::foveal_batch(images, loc, cfg.sensor), loc), state);
    }
    const Tensor lp = net.classify(state).value();
    const std::size_t k = lp.dim(1);
    for (std::size_t b = 0; b < bsz; ++b) {
      if (done[b]) continue;
      SequencePrediction& p = out[b];
      Tensor row({k}, std::vector<Scalar>(lp.ptr() + b * k, lp.ptr() + (b + 1) * k));
      const std::size_t cls = argmax(row.data());
      p.slot_predictions.push_back(cls);
      p.slot_log_probs.push_back(row);
      p.prediction_steps.push_back(p.trajectory.size());
      bool finished = false;
      if (!cfg.sequential) {
        p.labels.push_back(cls);
        p.log_probs.push_back(row);
        p.terminated_by = Termination::max_length;
        finished = true;
      } else if (cls == cfg.eos_class()) {
        p.terminated_by = Termination::eos;
        finished = true;
      } else if (s == cfg.max_targets) {
        p.terminated_by = Termination::max_length;
        finished = true;
      } else {
        p.labels.push_back(cls);
        p.log_probs.push_back(row);
      }
      if (finished) {
        done[b] = true;
        --remaining;
      }
    }
  }
  return out;
}

SequencePrediction deterministic_decode(const Tensor& image, const ParamSet& params, const ModelConfig& cfg) {
  const Tensor* img[1] = {&image};
  return std::move(decode_batch(img, params, cfg, {})[0]);
}

Tensor average_log_probs(std::span<const Tensor> log_probs) {
  if (log_probs.empty()) throw std::invalid_argument("average_log_probs: nothing to average");
  if (log_probs.size() == 1) return log_probs[0];
  Tensor avg(log_probs[0].shape());
  for (const Tensor& t : log_probs) {
    if (t.size() != avg.size()) throw DimensionError("average_log_probs: length mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) avg[i] += t[i];
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(log_probs.size());
  for (auto& v : avg.data()) v *= inv;
  const Scalar mx = *std::max_element(avg.data().begin(), avg.data().end());
  Scalar z = 0;
  for (Scalar v : avg.data()) z += std::exp(v - mx);
  const Scalar lz = mx + std::log(z);
  for (auto& v : avg.data()) v -= lz;
  return avg;
}

SequencePrediction mc_average_predict(const Tensor& image, const ParamSet& params, const ModelConfig& cfg,
                                      std::size_t m_samples, Scalar sigma, Rng& rng) {
  if (m_samples < 1) throw std::invalid_argument("mc_average_predict: M must be at least 1");
  std::vector<const Tensor*> images(m_samples, &image);
  std::vector<Rng> streams;
  for (std::size_t m = 0; m < m_samples; ++m) streams.push_back(rng.split(m));
  const auto runs = decode_batch(images, params, cfg, {sigma}, streams);

  std::size_t shortest = 0;
  for (std::size_t m = 1; m < runs.size(); ++m)
    if (runs[m].labels.size() < runs[shortest].labels.size()) shortest = m;
  const std::size_t len = runs[shortest].labels.size();

  SequencePrediction out;
  out.trajectory = runs[0].trajectory;
  out.terminated_by = runs[shortest].terminated_by;
  for (std::size_t pos = 0; pos < len; ++pos) {
    std::vector<Tensor> at;
    for (const auto& r : runs) at.push_back(r.log_probs[pos]);
    Tensor avg = average_log_probs(at);
    const std::size_t cls = argmax(avg.data());
    if (cfg.sequential && cls == cfg.eos_class()) {
      out.terminated_by = Termination::eos;
      break;
    }
    out.labels.push_back(cls);
    out.log_probs.push_back(std::move(avg));
  }
  return out;
}

SequencePrediction forward_backward_merge(const SequencePrediction& fwd, const SequencePrediction& bwd,
                                          std::optional<std::size_t> eos_class) {
  const std::size_t k = std::min(fwd.labels.size(), bwd.labels.size());
  SequencePrediction out;
  out.trajectory = fwd.trajectory;
  out.terminated_by = fwd.terminated_by;
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor pair[2] = {fwd.log_probs[i], bwd.log_probs[k - 1 - i]};
    Tensor avg = average_log_probs(pair);
    std::size_t best = eos_class && *eos_class == 0 ? 1 : 0;
    for (std::size_t c = 0; c < avg.size(); ++c) {
      if (eos_class && c == *eos_class) continue;
      if (avg[c] > avg[best]) best = c;
    }
    out.labels.push_back(best);
    out.log_probs.push_back(std::move(avg));
  }
  return out;
}

Tensor crop_centered(const Tensor& image, sensor::PixelCoord center, std::size_t crop_h, std::size_t crop_w) {
  if (image.rank() != 3) throw DimensionError("crop_centered: image must be [c x h x w]");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const long top = static_cast<long>(std::floor(center.row + Scalar(0.5))) - static_cast<long>(crop_h / 2);
  const long left = static_cast<long>(std::floor(center.col + Scalar(0.5))) - static_cast<long>(crop_w / 2);
  Tensor out({c, crop_h, crop_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < crop_h; ++r) {
      const long y = top + static_cast<long>(r);
      if (y < 0 || y >= static_cast<long>(h)) continue;
      for (std::size_t col = 0; col < crop_w; ++col) {
        const long x = left + static_cast<long>(col);
        if (x < 0 || x >= static_cast<long>(w)) continue;
        out[(ch * crop_h + r) * crop_w + col] = image[(ch * h + static_cast<std::size_t>(y)) * w + x];
      }
    }
  return out;
}

FocusResult focus_refine(const Tensor& large_image, const ParamSet& params, const ModelConfig& cfg,
                         std::size_t crop_h, std::size_t crop_w) {
  if (large_image.rank() != 3 || crop_h > large_image.dim(1) || crop_w > large_image.dim(2))
    throw DimensionError("focus_refine: crop larger than the image");
  FocusResult res;
  res.first_pass = deterministic_decode(large_image, params, cfg);
  Scalar row = 0, col = 0;
  for (const auto& l : res.first_pass.trajectory) {
    const auto px = sensor::loc_to_pixels(l, large_image.dim(1), large_image.dim(2), cfg.sensor);
    row += px.row;
    col += px.col;
  }
  const auto n = static_cast<Scalar>(res.first_pass.trajectory.size());
  res.centroid = {row / n, col / n};
  res.crop = crop_centered(large_image, res.centroid, crop_h, crop_w);
  res.refined = deterministic_decode(res.crop, params, cfg);
  return res;
}

}  // namespace dram
