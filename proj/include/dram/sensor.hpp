#pragma once

#include <cstddef>
#include <span>

#include "dram/tensor.hpp"

// Glimpse sensor: coordinate conversion, patch extraction and the two-scale
// foveal observation. Images are [channels x height x width].
namespace dram::sensor {

/// Attention location in coordinate units. Origin at the image center,
/// +x to the right, +y downward. Not clamped.
struct LocationCoord {
  Scalar x = 0;
  Scalar y = 0;
};

struct PixelCoord {
  Scalar row = 0;
  Scalar col = 0;
};

struct SensorConfig {
  Scalar unit_width_px = 20;      ///< pixels per coordinate unit
  std::size_t patch_size = 12;    ///< side of the fine patch
  std::size_t coarse_factor = 3;  ///< coarse patch covers coarse_factor * patch_size
  std::size_t context_size = 32;  ///< side of the downsampled whole-image view

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct GlimpseObservation {
  Tensor fine;    ///< [c x patch x patch]
  Tensor coarse;  ///< [c x patch x patch]
  LocationCoord location;
};

PixelCoord loc_to_pixels(LocationCoord l, std::size_t image_h, std::size_t image_w,
                         const SensorConfig& cfg);
/// Inverse of loc_to_pixels.
LocationCoord pixels_to_loc(PixelCoord p, std::size_t image_h, std::size_t image_w,
                            const SensorConfig& cfg);

/// Square crop of side `size` centered at the rounded (half-up) center;
/// pixels outside the image read as zero.
Tensor extract_patch(const Tensor& image, PixelCoord center, std::size_t size);

/// Area average when the extents divide evenly, bilinear resampling otherwise.
Tensor downsample(const Tensor& image, std::size_t out_h, std::size_t out_w);

GlimpseObservation extract_foveal_glimpse(const Tensor& image, LocationCoord l, const SensorConfig& cfg);

/// Batched foveal glimpses: row b of `locations` ([B x 2], columns x, y) is
/// applied to images[b]. Output is [B x 2c x patch x patch], fine channels
/// first, coarse channels after.
Tensor foveal_batch(std::span<const Tensor* const> images, const Tensor& locations,
                    const SensorConfig& cfg);

/// Batched context views, [B x c x context_size x context_size].
Tensor context_batch(std::span<const Tensor* const> images, const SensorConfig& cfg);

}  // namespace dram::sensor
