#include "dram/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dram {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'A', 'M', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void put_tensors(const ParamSet& set) {
    put<std::uint32_t>(static_cast<std::uint32_t>(set.size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      put_string(set.name(i));
      const Tensor& t = set[i];
      put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d = 0; d < t.rank(); ++d) put<std::uint64_t>(t.dim(d));
      for (Scalar v : t.data()) put<double>(static_cast<double>(v));
    }
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  ParamSet get_tensors() {
    ParamSet set;
    const auto count = get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = get_string();
      const auto rank = get<std::uint32_t>();
      if (rank == 0 || rank > 8) fail("bad tensor rank");
      Shape shape;
      std::size_t n = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
        if (shape.back() == 0 || shape.back() > (b_.size() - pos_)) fail("bad tensor extent");
        n *= shape.back();
      }
      need(n * sizeof(double));
      Tensor t(shape);
      for (auto& v : t.data()) v = static_cast<Scalar>(get<double>());
      set.add(std::move(name), std::move(t));
    }
    return set;
  }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint: " + what + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const RunConfig& cfg, std::uint64_t epoch, const Rng& rng, const ParamSet& params,
                           const OptimizerState& opt) {
  Checkpoint c;
  c.config_text = to_text(cfg);
  c.config_hash = config_hash(cfg);
  c.epoch = epoch;
  c.rng = rng.state();
  c.params = params;
  c.optimizer = opt;
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char ch : kMagic) w.put(ch);
  w.put<std::uint32_t>(Checkpoint::kVersion);
  w.put<std::uint64_t>(ckpt.config_hash);
  w.put_string(ckpt.config_text);
  w.put<std::uint64_t>(ckpt.epoch);
  w.put<std::uint64_t>(ckpt.rng.key);
  w.put<std::uint64_t>(ckpt.rng.counter);
  w.put<double>(static_cast<double>(ckpt.optimizer.learning_rate));
  w.put<double>(static_cast<double>(ckpt.optimizer.momentum));
  w.put<double>(static_cast<double>(ckpt.optimizer.decay));
  w.put_tensors(ckpt.params);
  w.put_tensors(ckpt.optimizer.velocity);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  for (char ch : kMagic)
    if (r.get<char>() != ch) r.fail("bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != Checkpoint::kVersion)
    r.fail("unsupported version " + std::to_string(v));
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.config_text = r.get_string();
  c.epoch = r.get<std::uint64_t>();
  c.rng.key = r.get<std::uint64_t>();
  c.rng.counter = r.get<std::uint64_t>();
  c.optimizer.learning_rate = static_cast<Scalar>(r.get<double>());
  c.optimizer.momentum = static_cast<Scalar>(r.get<double>());
  c.optimizer.decay = static_cast<Scalar>(r.get<double>());
  c.params = r.get_tensors();
  c.optimizer.velocity = r.get_tensors();
  if (!r.done()) r.fail("trailing bytes");
  if (c.optimizer.velocity.size() != c.params.size()) r.fail("velocity does not mirror the parameters");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      throw CheckpointError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash,
                           bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Checkpoint c = deserialize_checkpoint(ss.str());
  if (expected_hash && *expected_hash != c.config_hash && !allow_mismatch)
    throw CheckpointError(path.string() + ": config hash mismatch (checkpoint " + std::to_string(c.config_hash) +
                          ", current " + std::to_string(*expected_hash) + ")");
  return c;
}

}  // namespace dram
