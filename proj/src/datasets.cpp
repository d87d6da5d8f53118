#include "dram/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace dram {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kDigitSide = 28;
constexpr std::size_t kNoisePatches = 6;
constexpr std::size_t kNoiseSide = 8;
constexpr double kSaltFraction = 0.01;

std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError("read error in " + path.string());
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::string& file) {
  if (offset + 4 > b.size())
    throw FormatError(file + ": truncated at offset " + std::to_string(offset));
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(bytes, 4);
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& file) {
  T v{};
  const auto offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError(file + ": truncated at offset " + std::to_string(offset));
  return v;
}

void paste_max(Tensor& canvas, const Tensor& src, long row, long col) {
  const std::size_t h = canvas.dim(1), w = canvas.dim(2);
  const std::size_t sh = src.dim(1), sw = src.dim(2);
  for (std::size_t r = 0; r < sh; ++r) {
    const long y = row + static_cast<long>(r);
    if (y < 0 || y >= static_cast<long>(h)) continue;
    for (std::size_t c = 0; c < sw; ++c) {
      const long x = col + static_cast<long>(c);
      if (x < 0 || x >= static_cast<long>(w)) continue;
      Scalar& dst = canvas[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      dst = std::min(Scalar(1), std::max(dst, src[r * sw + c]));
    }
  }
}

bool boxes_overlap(long r1, long c1, long r2, long c2, long side) {
  return r1 < r2 + side && r2 < r1 + side && c1 < c2 + side && c2 < c1 + side;
}

struct Source {
  const MnistSet& mnist;
  std::vector<std::vector<std::size_t>> classes;

  explicit Source(const MnistSet& m) : mnist(m), classes(m.by_class()) {
    if (mnist.rows != kDigitSide || mnist.cols != kDigitSide)
      throw std::invalid_argument("generators expect 28x28 source digits");
    for (std::size_t d = 0; d < 10; ++d)
      if (classes[d].empty()) throw std::invalid_argument("source set lacks digit " + std::to_string(d));
  }

  DigitPlacement draw_digit(Rng& rng) const {
    DigitPlacement p;
    p.digit = static_cast<std::uint8_t>(rng.below(10));
    const auto& pool = classes[p.digit];
    p.source = pool[rng.below(pool.size())];
    return p;
  }
};

void add_clutter(const Source& src, Tensor& canvas, Rng& rng, const std::vector<DigitPlacement>& used) {
  const std::size_t h = canvas.dim(1), w = canvas.dim(2);
  for (std::size_t k = 0; k < kNoisePatches; ++k) {
    std::size_t img = 0;
    do {
      img = rng.below(src.mnist.size());
    } while (std::any_of(used.begin(), used.end(), [&](const DigitPlacement& d) { return d.source == img; }) &&
             src.mnist.size() > used.size());
    const Tensor& digit = src.mnist.images[img];
    Tensor frag({1, kNoiseSide, kNoiseSide});
    // Prefer a fragment that carries some ink; fall back to the last draw.
    for (int attempt = 0; attempt < 10; ++attempt) {
      const std::size_t r0 = rng.below(kDigitSide - kNoiseSide + 1);
      const std::size_t c0 = rng.below(kDigitSide - kNoiseSide + 1);
      Scalar ink = 0;
      for (std::size_t r = 0; r < kNoiseSide; ++r)
        for (std::size_t c = 0; c < kNoiseSide; ++c)
          ink += frag[r * kNoiseSide + c] = digit[(r0 + r) * kDigitSide + c0 + c];
      if (ink >= Scalar(4)) break;
    }
    paste_max(canvas, frag, static_cast<long>(rng.below(h - kNoiseSide + 1)),
              static_cast<long>(rng.below(w - kNoiseSide + 1)));
  }
  const std::size_t salt = static_cast<std::size_t>(std::lround(kSaltFraction * static_cast<double>(h * w)));
  for (std::size_t i = 0; i < salt; ++i) canvas[rng.below(h * w)] = 1;
}

LabeledImage make_two_digit(const Source& src, const GeneratorSpec& spec, std::size_t index) {
  Rng rng = Rng(spec.seed).split(index);
  const std::size_t h = spec.canvas_h, w = spec.canvas_w;
  if (h < 2 * kDigitSide && w < 2 * kDigitSide) throw std::invalid_argument("canvas too small for two digits");
  LabeledImage out;
  out.meta.spec = spec;
  out.meta.index = index;
  DigitPlacement a = src.draw_digit(rng);
  DigitPlacement b = src.draw_digit(rng);
  const long side = static_cast<long>(kDigitSide);
  while (true) {
    a.row = static_cast<long>(rng.below(h - kDigitSide + 1));
    a.col = static_cast<long>(rng.below(w - kDigitSide + 1));
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      b.row = static_cast<long>(rng.below(h - kDigitSide + 1));
      b.col = static_cast<long>(rng.below(w - kDigitSide + 1));
      placed = !boxes_overlap(a.row, a.col, b.row, b.col, side);
    }
    if (placed) break;
  }
  out.pixels = Tensor({1, h, w});
  paste_max(out.pixels, src.mnist.images[a.source], a.row, a.col);
  paste_max(out.pixels, src.mnist.images[b.source], b.row, b.col);
  out.meta.digits = {a, b};
  if (spec.task == Task::pairs) {
    add_clutter(src, out.pixels, rng, out.meta.digits);
    out.labels = {static_cast<std::uint8_t>(pair_label(a.digit, b.digit))};
  } else {
    out.labels = {static_cast<std::uint8_t>(a.digit + b.digit)};
  }
  return out;
}

LabeledImage make_sequence(const Source& src, const GeneratorSpec& spec, std::size_t index) {
  Rng rng = Rng(spec.seed).split(index);
  const std::size_t h = spec.canvas_h, w = spec.canvas_w;
  if (h < kDigitSide || w < kDigitSide) throw std::invalid_argument("canvas smaller than a digit");
  if (spec.max_digits < 1) throw std::invalid_argument("max_digits must be at least 1");
  std::size_t n = 1 + rng.below(spec.max_digits);
  std::vector<std::size_t> gaps(spec.max_digits, 0);
  for (auto& g : gaps) g = rng.below(5);
  auto width_of = [&](std::size_t count) {
    std::size_t total = count * kDigitSide;
    for (std::size_t i = 0; i + 1 < count; ++i) total += gaps[i];
    return total;
  };
  while (n > 1 && width_of(n) > w) --n;
  const std::size_t total = width_of(n);

  LabeledImage out;
  out.meta.spec = spec;
  out.meta.index = index;
  out.pixels = Tensor({1, h, w});
  long col = static_cast<long>(rng.below(w - total + 1));
  for (std::size_t i = 0; i < n; ++i) {
    DigitPlacement d = src.draw_digit(rng);
    d.row = static_cast<long>(rng.below(h - kDigitSide + 1));
    d.col = col;
    col += static_cast<long>(kDigitSide + (i < gaps.size() ? gaps[i] : 0));
    paste_max(out.pixels, src.mnist.images[d.source], d.row, d.col);
    out.meta.digits.push_back(d);
    out.labels.push_back(d.digit);
  }
  if (spec.reversed) std::reverse(out.labels.begin(), out.labels.end());

  if (spec.task == Task::sequence_large) {
    const std::size_t bh = h * spec.large_factor, bw = w * spec.large_factor;
    out.meta.offset_row = static_cast<long>(rng.below(bh - h + 1));
    out.meta.offset_col = static_cast<long>(rng.below(bw - w + 1));
    Tensor big({1, bh, bw});
    paste_max(big, out.pixels, out.meta.offset_row, out.meta.offset_col);
    out.pixels = std::move(big);
  }
  return out;
}

LabeledImage make_sample(const Source& src, const GeneratorSpec& spec, std::size_t index) {
  switch (spec.task) {
    case Task::pairs:
    case Task::addition:
      return make_two_digit(src, spec, index);
    case Task::sequence:
    case Task::sequence_large:
      return make_sequence(src, spec, index);
  }
  throw std::invalid_argument("unknown task");
}

std::size_t classes_for(const GeneratorSpec& spec) {
  switch (spec.task) {
    case Task::pairs:
      return 55;
    case Task::addition:
      return 19;
    default:
      return 11;
  }
}

}  // namespace

std::vector<std::vector<std::size_t>> MnistSet::by_class() const {
  std::vector<std::vector<std::size_t>> out(10);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 10) out[labels[i]].push_back(i);
  return out;
}

MnistSet load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string iname = images_path.string(), lname = labels_path.string();
  const auto ib = read_maybe_gzipped(images_path);
  const auto lb = read_maybe_gzipped(labels_path);
  if (const auto m = read_be32(ib, 0, iname); m != kImageMagic)
    throw FormatError(iname + ": bad image magic at offset 0: " + std::to_string(m));
  if (const auto m = read_be32(lb, 0, lname); m != kLabelMagic)
    throw FormatError(lname + ": bad label magic at offset 0: " + std::to_string(m));
  const std::size_t count = read_be32(ib, 4, iname);
  const std::size_t rows = read_be32(ib, 8, iname);
  const std::size_t cols = read_be32(ib, 12, iname);
  const std::size_t lcount = read_be32(lb, 4, lname);
  if (count != lcount)
    throw FormatError(lname + ": label count at offset 4 is " + std::to_string(lcount) + ", images have " +
                      std::to_string(count));
  if (rows == 0 || cols == 0) throw FormatError(iname + ": zero image extent at offset 8");
  const std::size_t need = 16 + count * rows * cols;
  if (ib.size() < need) throw FormatError(iname + ": truncated at offset " + std::to_string(ib.size()));
  if (lb.size() < 8 + count) throw FormatError(lname + ": truncated at offset " + std::to_string(lb.size()));

  MnistSet set;
  set.rows = rows;
  set.cols = cols;
  set.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img({1, rows, cols});
    const std::uint8_t* px = ib.data() + 16 + i * rows * cols;
    for (std::size_t j = 0; j < rows * cols; ++j) img[j] = static_cast<Scalar>(px[j]) / Scalar(255);
    set.images.push_back(std::move(img));
  }
  set.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<long>(count));
  return set;
}

void save_mnist_idx(const MnistSet& set, const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im || !lb) throw FormatError("cannot write IDX files");
  write_be32(im, kImageMagic);
  write_be32(im, static_cast<std::uint32_t>(set.size()));
  write_be32(im, static_cast<std::uint32_t>(set.rows));
  write_be32(im, static_cast<std::uint32_t>(set.cols));
  for (const auto& img : set.images)
    for (Scalar v : img.data()) im.put(static_cast<char>(std::lround(std::clamp(v, Scalar(0), Scalar(1)) * 255)));
  write_be32(lb, kLabelMagic);
  write_be32(lb, static_cast<std::uint32_t>(set.size()));
  for (auto l : set.labels) lb.put(static_cast<char>(l));
}

std::string task_name(Task t) {
  switch (t) {
    case Task::pairs:
      return "pairs";
    case Task::addition:
      return "addition";
    case Task::sequence:
      return "sequence";
    case Task::sequence_large:
      return "sequence-large";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "pairs") return Task::pairs;
  if (name == "addition") return Task::addition;
  if (name == "sequence") return Task::sequence;
  if (name == "sequence-large") return Task::sequence_large;
  throw std::invalid_argument("unknown task '" + name + "' (pairs, addition, sequence, sequence-large)");
}

std::size_t pair_label(std::size_t a, std::size_t b) {
  if (a > 9 || b > 9) throw std::invalid_argument("pair_label: digits must be 0..9");
  if (a > b) std::swap(a, b);
  // pairs starting with i < a contribute 10 - i each
  return a * 10 - a * (a - 1) / 2 + (b - a);
}

LabeledImage generate_sample(const MnistSet& mnist, const GeneratorSpec& spec, std::size_t index) {
  return make_sample(Source(mnist), spec, index);
}

Dataset generate(const MnistSet& mnist, const GeneratorSpec& spec, std::size_t count) {
  const Source src(mnist);
  Dataset ds;
  ds.num_classes = classes_for(spec);
  ds.max_len = (spec.task == Task::pairs || spec.task == Task::addition) ? 1 : spec.max_digits;
  const std::size_t f = spec.task == Task::sequence_large ? spec.large_factor : 1;
  ds.height = spec.canvas_h * f;
  ds.width = spec.canvas_w * f;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(make_sample(src, spec, i));
  return ds;
}

Dataset gen_pairs_task(const MnistSet& mnist, std::size_t count, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.task = Task::pairs;
  spec.seed = seed;
  return generate(mnist, spec, count);
}

Dataset gen_addition_task(const MnistSet& mnist, std::size_t count, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.task = Task::addition;
  spec.seed = seed;
  return generate(mnist, spec, count);
}

Dataset gen_sequence_task(const MnistSet& mnist, std::size_t count, std::size_t max_digits, std::size_t canvas_h,
                          std::size_t canvas_w, std::uint64_t seed, bool reversed, bool large) {
  GeneratorSpec spec;
  spec.task = large ? Task::sequence_large : Task::sequence;
  spec.seed = seed;
  spec.canvas_h = canvas_h;
  spec.canvas_w = canvas_w;
  spec.max_digits = max_digits;
  spec.reversed = reversed;
  return generate(mnist, spec, count);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write("DRAM", 4);
  write_le<std::uint32_t>(out, kDatasetVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.height));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.width));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.max_len));
  for (const auto& s : ds.samples) {
    if (s.labels.size() > ds.max_len || s.pixels.size() != ds.height * ds.width)
      throw std::invalid_argument("sample does not fit the dataset header");
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.labels.size()));
    for (std::size_t i = 0; i < ds.max_len; ++i)
      write_le<std::uint8_t>(out, i < s.labels.size() ? s.labels[i] : std::uint8_t{0});
    for (Scalar v : s.pixels.data()) write_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + name);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DRAM", 4) != 0) throw FormatError(name + ": bad magic at offset 0");
  if (const auto v = read_le<std::uint32_t>(in, name); v != kDatasetVersion)
    throw FormatError(name + ": unsupported version " + std::to_string(v) + " at offset 4");
  Dataset ds;
  const std::size_t count = read_le<std::uint32_t>(in, name);
  ds.height = read_le<std::uint32_t>(in, name);
  ds.width = read_le<std::uint32_t>(in, name);
  ds.num_classes = read_le<std::uint32_t>(in, name);
  ds.max_len = read_le<std::uint32_t>(in, name);
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    LabeledImage s;
    const auto offset = static_cast<long long>(in.tellg());
    const std::size_t len = read_le<std::uint8_t>(in, name);
    if (len > ds.max_len) throw FormatError(name + ": label length exceeds max_len at offset " + std::to_string(offset));
    for (std::size_t j = 0; j < ds.max_len; ++j) {
      const auto l = read_le<std::uint8_t>(in, name);
      if (j < len) s.labels.push_back(l);
    }
    s.pixels = Tensor({1, ds.height, ds.width});
    for (auto& v : s.pixels.data()) v = static_cast<Scalar>(read_le<float>(in, name));
    s.meta.index = i;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::size_t> label_histogram(const Dataset& ds) {
  std::vector<std::size_t> hist(ds.num_classes, 0);
  for (const auto& s : ds.samples)
    for (auto l : s.labels)
      if (l < hist.size()) ++hist[l];
  return hist;
}

}  // namespace dram
