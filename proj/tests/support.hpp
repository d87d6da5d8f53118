#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dram/datasets.hpp"
#include "dram/model.hpp"
#include "dram/tape.hpp"

namespace testing {

using dram::Scalar;
using dram::Tensor;

inline Tensor random_tensor(dram::Shape shape, dram::Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

/// Ten visually distinct 28x28 glyphs with per-sample jitter; stands in for
/// MNIST where the real files are not needed.
inline dram::MnistSet synthetic_digits(std::size_t per_class, std::uint64_t seed) {
  dram::MnistSet set;
  set.rows = set.cols = 28;
  dram::Rng rng(seed);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::uint8_t d = 0; d < 10; ++d) {
      Tensor img({1, 28, 28});
      const long dy = static_cast<long>(rng.below(5)) - 2, dx = static_cast<long>(rng.below(5)) - 2;
      for (long r = 4; r < 24; ++r)
        for (long c = 4; c < 24; ++c) {
          // stripes whose angle and period depend on the digit
          const bool on = ((r * (d % 3 + 1) + c * (d / 3 + 1)) / (2 + d % 2)) % 2 == 0;
          if (on) img[static_cast<std::size_t>((r + dy) * 28 + (c + dx))] = static_cast<Scalar>(0.5 + 0.5 * rng.uniform01());
        }
      set.images.push_back(std::move(img));
      set.labels.push_back(d);
    }
  return set;
}

/// Small model config usable on 40x40 images.
inline dram::ModelConfig tiny_model(bool sequential = false, std::size_t classes = 5) {
  dram::ModelConfig m;
  m.num_classes = classes;
  m.sequential = sequential;
  m.glimpse_dim = 8;
  m.lstm_units = 6;
  m.emission_hidden = m.classifier_hidden = m.baseline_hidden = 5;
  m.glimpses_per_target = 2;
  m.max_targets = sequential ? 3 : 1;
  m.sensor = {8, 4, 2, 8};
  m.context_conv = {{3, 3, 2, 0}};
  return m;
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  std::size_t checked = 0;
};

inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences of `loss` against `analytic` for every element of
/// every tensor in `params` (or every `stride`-th element).
inline GradCheck check_gradients(dram::ParamSet& params, const dram::ParamSet& analytic,
                                 const std::function<double()>& loss, double eps = 1e-5, double floor = 1e-6,
                                 std::size_t stride = 1) {
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); i += stride) {
      const Scalar keep = params[t][i];
      params[t][i] = keep + eps;
      const double up = loss();
      params[t][i] = keep - eps;
      const double down = loss();
      params[t][i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double err = rel_error(analytic[t][i], numeric, floor);
      ++out.checked;
      if (err > out.max_rel) {
        out.max_rel = err;
        out.worst = params.name(t) + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[t][i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Reference crop: center rounded half-up, zeros outside.
inline Tensor naive_patch(const Tensor& img, double row, double col, std::size_t size) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const long top = static_cast<long>(std::floor(row + 0.5)) - static_cast<long>(size) / 2;
  const long left = static_cast<long>(std::floor(col + 0.5)) - static_cast<long>(size) / 2;
  Tensor out({img.dim(0), size, size});
  for (std::size_t ch = 0; ch < img.dim(0); ++ch)
    for (long r = 0; r < static_cast<long>(size); ++r)
      for (long c = 0; c < static_cast<long>(size); ++c) {
        const long y = top + r, x = left + c;
        if (y >= 0 && y < h && x >= 0 && x < w)
          out[(ch * size + r) * size + c] = img[(ch * h + y) * w + x];
      }
  return out;
}

/// Reference block mean by an integer factor.
inline Tensor naive_block_mean(const Tensor& img, std::size_t factor) {
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({ch, h / factor, w / factor});
  for (std::size_t k = 0; k < ch; ++k)
    for (std::size_t r = 0; r < h / factor; ++r)
      for (std::size_t c = 0; c < w / factor; ++c) {
        Scalar sum = 0;
        for (std::size_t i = 0; i < factor; ++i)
          for (std::size_t j = 0; j < factor; ++j) sum += img[(k * h + r * factor + i) * w + c * factor + j];
        out[(k * (h / factor) + r) * (w / factor) + c] = sum / static_cast<Scalar>(factor * factor);
      }
  return out;
}

}  // namespace testing
