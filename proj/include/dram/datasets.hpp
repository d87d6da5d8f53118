#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dram/rng.hpp"
#include "dram/tensor.hpp"

namespace dram {

/// Malformed input file; the message names the byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source digits, pixels scaled to [0, 1].
struct MnistSet {
  std::size_t rows = 0, cols = 0;
  std::vector<Tensor> images;  ///< [1 x rows x cols] each
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return images.size(); }
  /// Indices of all images of digit d.
  std::vector<std::vector<std::size_t>> by_class() const;
};

/// Reads the IDX pair (image magic 0x00000803, label magic 0x00000801).
/// Gzip-compressed files are read transparently.
MnistSet load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes an IDX pair (uncompressed), the inverse of load_mnist_idx.
void save_mnist_idx(const MnistSet& set, const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

enum class Task { pairs, addition, sequence, sequence_large };

std::string task_name(Task t);
Task parse_task(const std::string& name);

/// Everything needed to regenerate a sample: the generator settings and the
/// sample index. Per-sample randomness is Rng(seed).split(index).
struct GeneratorSpec {
  Task task = Task::pairs;
  std::uint64_t seed = 0;
  std::size_t canvas_h = 100, canvas_w = 100;
  std::size_t max_digits = 2;
  bool reversed = false;         ///< right-to-left label order
  std::size_t large_factor = 2;  ///< sequence_large canvas scale per side
};

struct DigitPlacement {
  std::size_t source = 0;  ///< index into the MnistSet
  std::uint8_t digit = 0;
  long row = 0, col = 0;   ///< top-left corner on the canvas
};

struct SampleMeta {
  GeneratorSpec spec;
  std::size_t index = 0;
  std::vector<DigitPlacement> digits;  ///< left-to-right for sequence tasks
  long offset_row = 0, offset_col = 0;  ///< block offset on the enlarged canvas
};

struct LabeledImage {
  Tensor pixels;                     ///< [1 x h x w], values in [0, 1]
  std::vector<std::uint8_t> labels;  ///< one entry for single-object tasks
  SampleMeta meta;
};

struct Dataset {
  std::size_t height = 0, width = 0;
  std::size_t num_classes = 0;  ///< includes EOS for sequence tasks
  std::size_t max_len = 1;
  std::vector<LabeledImage> samples;

  std::size_t size() const { return samples.size(); }
};

/// Index of the unordered pair {a, b} among the 55 sorted pairs (a <= b),
/// enumerated lexicographically.
std::size_t pair_label(std::size_t a, std::size_t b);

Dataset gen_pairs_task(const MnistSet& mnist, std::size_t count, std::uint64_t seed);
Dataset gen_addition_task(const MnistSet& mnist, std::size_t count, std::uint64_t seed);
/// 1..max_digits digits left to right on a canvas_h x canvas_w canvas. With
/// large = true each sample is the same digit block embedded in a canvas
/// large_factor times bigger per side.
Dataset gen_sequence_task(const MnistSet& mnist, std::size_t count, std::size_t max_digits,
                          std::size_t canvas_h, std::size_t canvas_w, std::uint64_t seed, bool reversed = false,
                          bool large = false);

/// Generic entry point used by the generators and for regeneration from meta.
LabeledImage generate_sample(const MnistSet& mnist, const GeneratorSpec& spec, std::size_t index);
Dataset generate(const MnistSet& mnist, const GeneratorSpec& spec, std::size_t count);

/// Little-endian binary: header {'DRAM', version, count, h, w, K, max_len} as
/// u32, then per sample {len u8, labels u8 x max_len, pixels f32 x h x w}.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Counts of each label value over all positions.
std::vector<std::size_t> label_histogram(const Dataset& ds);

}  // namespace dram
