#include "dram/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dram::sensor {

namespace {

long round_half_up(Scalar v) { return static_cast<long>(std::floor(v + Scalar(0.5))); }

void check_image(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("sensor: image must be [c x h x w], got " + shape_str(image.shape()));
}

// Writes the patch into `out` (c * size * size values).
void crop_into(const Tensor& image, PixelCoord center, std::size_t size, Scalar* out) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const long top = round_half_up(center.row) - static_cast<long>(size / 2);
  const long left = round_half_up(center.col) - static_cast<long>(size / 2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < size; ++r) {
      Scalar* dst = out + (ch * size + r) * size;
      const long y = top + static_cast<long>(r);
      if (y < 0 || y >= static_cast<long>(h)) {
        std::fill_n(dst, size, Scalar(0));
        continue;
      }
      const Scalar* src = image.ptr() + (ch * h + static_cast<std::size_t>(y)) * w;
      for (std::size_t col = 0; col < size; ++col) {
        const long x = left + static_cast<long>(col);
        dst[col] = (x < 0 || x >= static_cast<long>(w)) ? Scalar(0) : src[x];
      }
    }
  }
}

void area_average(const Scalar* in, std::size_t h, std::size_t w, Scalar* out, std::size_t oh,
                  std::size_t ow) {
  const std::size_t fy = h / oh, fx = w / ow;
  const Scalar count = static_cast<Scalar>(fy * fx);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      Scalar acc = 0;
      for (std::size_t i = 0; i < fy; ++i)
        for (std::size_t j = 0; j < fx; ++j) acc += in[(r * fy + i) * w + c * fx + j];
      out[r * ow + c] = acc / count;
    }
}

void bilinear(const Scalar* in, std::size_t h, std::size_t w, Scalar* out, std::size_t oh, std::size_t ow) {
  const Scalar sy = static_cast<Scalar>(h) / static_cast<Scalar>(oh);
  const Scalar sx = static_cast<Scalar>(w) / static_cast<Scalar>(ow);
  for (std::size_t r = 0; r < oh; ++r) {
    const Scalar y = std::clamp((static_cast<Scalar>(r) + Scalar(0.5)) * sy - Scalar(0.5), Scalar(0),
                                static_cast<Scalar>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const Scalar ty = y - static_cast<Scalar>(y0);
    for (std::size_t c = 0; c < ow; ++c) {
      const Scalar x = std::clamp((static_cast<Scalar>(c) + Scalar(0.5)) * sx - Scalar(0.5), Scalar(0),
                                  static_cast<Scalar>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const Scalar tx = x - static_cast<Scalar>(x0);
      const Scalar top = in[y0 * w + x0] * (1 - tx) + in[y0 * w + x1] * tx;
      const Scalar bot = in[y1 * w + x0] * (1 - tx) + in[y1 * w + x1] * tx;
      out[r * ow + c] = top * (1 - ty) + bot * ty;
    }
  }
}

void downsample_into(const Scalar* in, std::size_t c, std::size_t h, std::size_t w, Scalar* out,
                     std::size_t oh, std::size_t ow) {
  const bool even = h % oh == 0 && w % ow == 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (even)
      area_average(in + ch * h * w, h, w, out + ch * oh * ow, oh, ow);
    else
      bilinear(in + ch * h * w, h, w, out + ch * oh * ow, oh, ow);
  }
}

}  // namespace

void SensorConfig::validate() const {
  if (!(unit_width_px > 0)) throw std::invalid_argument("sensor: unit_width_px must be positive");
  if (patch_size < 2) throw std::invalid_argument("sensor: patch_size must be at least 2");
  if (coarse_factor < 2) throw std::invalid_argument("sensor: coarse_factor must be at least 2");
  if (context_size < 1) throw std::invalid_argument("sensor: context_size must be positive");
}

PixelCoord loc_to_pixels(LocationCoord l, std::size_t image_h, std::size_t image_w, const SensorConfig& cfg) {
  return {static_cast<Scalar>(image_h) / 2 + l.y * cfg.unit_width_px,
          static_cast<Scalar>(image_w) / 2 + l.x * cfg.unit_width_px};
}

LocationCoord pixels_to_loc(PixelCoord p, std::size_t image_h, std::size_t image_w, const SensorConfig& cfg) {
  return {(p.col - static_cast<Scalar>(image_w) / 2) / cfg.unit_width_px,
          (p.row - static_cast<Scalar>(image_h) / 2) / cfg.unit_width_px};
}

Tensor extract_patch(const Tensor& image, PixelCoord center, std::size_t size) {
  check_image(image);
  if (size < 1) throw DimensionError("extract_patch: size must be positive");
  Tensor out({image.dim(0), size, size});
  crop_into(image, center, size, out.ptr());
  return out;
}

Tensor downsample(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  check_image(image);
  if (out_h == 0 || out_w == 0) throw DimensionError("downsample: output extents must be positive");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h > h || out_w > w) throw DimensionError("downsample: output larger than input");
  Tensor out({c, out_h, out_w});
  downsample_into(image.ptr(), c, h, w, out.ptr(), out_h, out_w);
  return out;
}

GlimpseObservation extract_foveal_glimpse(const Tensor& image, LocationCoord l, const SensorConfig& cfg) {
  check_image(image);
  const PixelCoord center = loc_to_pixels(l, image.dim(1), image.dim(2), cfg);
  const std::size_t p = cfg.patch_size;
  Tensor wide = extract_patch(image, center, p * cfg.coarse_factor);
  return {extract_patch(image, center, p), downsample(wide, p, p), l};
}

Tensor foveal_batch(std::span<const Tensor* const> images, const Tensor& locations, const SensorConfig& cfg) {
  if (images.empty()) throw DimensionError("foveal_batch: empty batch");
  if (locations.rank() != 2 || locations.dim(0) != images.size() || locations.dim(1) != 2)
    throw DimensionError("foveal_batch: locations must be [B x 2]");
  const std::size_t c = images[0]->dim(0);
  const std::size_t p = cfg.patch_size;
  const std::size_t wide_size = p * cfg.coarse_factor;
  const std::size_t plane = p * p;
  Tensor out({images.size(), 2 * c, p, p});
  std::vector<Scalar> wide(c * wide_size * wide_size);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Tensor& img = *images[b];
    check_image(img);
    if (img.dim(0) != c) throw DimensionError("foveal_batch: channel count differs across batch");
    const PixelCoord center =
        loc_to_pixels({locations.at(b, 0), locations.at(b, 1)}, img.dim(1), img.dim(2), cfg);
    Scalar* dst = out.ptr() + b * 2 * c * plane;
    crop_into(img, center, p, dst);
    crop_into(img, center, wide_size, wide.data());
    downsample_into(wide.data(), c, wide_size, wide_size, dst + c * plane, p, p);
  }
  return out;
}

Tensor context_batch(std::span<const Tensor* const> images, const SensorConfig& cfg) {
  if (images.empty()) throw DimensionError("context_batch: empty batch");
  const std::size_t c = images[0]->dim(0);
  const std::size_t s = cfg.context_size;
  Tensor out({images.size(), c, s, s});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Tensor& img = *images[b];
    check_image(img);
    if (s > img.dim(1) || s > img.dim(2)) throw DimensionError("context_batch: context larger than image");
    downsample_into(img.ptr(), c, img.dim(1), img.dim(2), out.ptr() + b * c * s * s, s, s);
  }
  return out;
}

}  // namespace dram::sensor
