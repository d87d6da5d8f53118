#include "dram/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace dram {

namespace {

[[noreturn]] void type_error(const std::string& key, const std::string& expected, const std::string& value) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) type_error(key, "a non-negative integer", v);
  errno = 0;
  const auto n = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) type_error(key, "a non-negative integer", v);
  return static_cast<std::size_t>(n);
}

Scalar parse_scalar(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d))
    type_error(key, "a number", v);
  return static_cast<Scalar>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  type_error(key, "a boolean", v);
}

std::vector<ConvLayerSpec> parse_convs(const std::string& key, const std::string& v) {
  std::vector<ConvLayerSpec> out;
  if (v == "none") return out;
  std::stringstream layers(v);
  std::string layer;
  while (std::getline(layers, layer, ',')) {
    std::vector<std::size_t> f;
    std::stringstream parts(layer);
    std::string part;
    while (std::getline(parts, part, ':')) f.push_back(parse_size(key, part));
    if (f.size() != 4) type_error(key, "filters:kernel:stride:padding[,...] or none", v);
    out.push_back({f[0], f[1], f[2], f[3]});
  }
  if (out.empty()) type_error(key, "filters:kernel:stride:padding[,...] or none", v);
  return out;
}

std::string fmt_scalar(Scalar s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(s));
  return buf;
}

std::string fmt_convs(const std::vector<ConvLayerSpec>& layers) {
  if (layers.empty()) return "none";
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ",";
    out += std::to_string(l.filters) + ":" + std::to_string(l.kernel) + ":" + std::to_string(l.stride) + ":" +
           std::to_string(l.padding);
  }
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  bool architecture;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, arch, member)                                                         \
  Field {                                                                                      \
    name, arch, [](RunConfig& c, const std::string& v) { c.member = parse_size(name, v); },    \
        [](const RunConfig& c) { return std::to_string(c.member); }                            \
  }
#define SCALAR_FIELD(name, member)                                                             \
  Field {                                                                                      \
    name, false, [](RunConfig& c, const std::string& v) { c.member = parse_scalar(name, v); }, \
        [](const RunConfig& c) { return fmt_scalar(c.member); }                                \
  }
#define BOOL_FIELD(name, arch, member)                                                         \
  Field {                                                                                      \
    name, arch, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); },    \
        [](const RunConfig& c) { return fmt_bool(c.member); }                                  \
  }
#define STRING_FIELD(name, member)                                                            \
  Field {                                                                                     \
    name, false, [](RunConfig& c, const std::string& v) { c.member = v; },                    \
        [](const RunConfig& c) { return c.member; }                                           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"task", true, [](RunConfig& c, const std::string& v) { c.task = parse_task(v); },
       [](const RunConfig& c) { return task_name(c.task); }},
      SIZE_FIELD("num_classes", true, model.num_classes),
      BOOL_FIELD("sequential", true, model.sequential),
      SIZE_FIELD("channels", true, model.channels),
      SIZE_FIELD("glimpse_dim", true, model.glimpse_dim),
      SIZE_FIELD("lstm_units", true, model.lstm_units),
      SIZE_FIELD("emission_hidden", true, model.emission_hidden),
      SIZE_FIELD("classifier_hidden", true, model.classifier_hidden),
      SIZE_FIELD("baseline_hidden", true, model.baseline_hidden),
      {"glimpse_net", true,
       [](RunConfig& c, const std::string& v) {
         if (v == "fc")
           c.model.glimpse_kind = GlimpseNetKind::fully_connected;
         else if (v == "conv")
           c.model.glimpse_kind = GlimpseNetKind::conv;
         else
           type_error("glimpse_net", "fc or conv", v);
       },
       [](const RunConfig& c) {
         return std::string(c.model.glimpse_kind == GlimpseNetKind::conv ? "conv" : "fc");
       }},
      {"glimpse_conv", true, [](RunConfig& c, const std::string& v) { c.model.glimpse_conv = parse_convs("glimpse_conv", v); },
       [](const RunConfig& c) { return fmt_convs(c.model.glimpse_conv); }},
      {"context_conv", true, [](RunConfig& c, const std::string& v) { c.model.context_conv = parse_convs("context_conv", v); },
       [](const RunConfig& c) { return fmt_convs(c.model.context_conv); }},
      SIZE_FIELD("glimpses", true, model.glimpses_per_target),
      SIZE_FIELD("max_targets", true, model.max_targets),
      BOOL_FIELD("use_context", true, model.use_context),
      {"unit_width", true, [](RunConfig& c, const std::string& v) { c.model.sensor.unit_width_px = parse_scalar("unit_width", v); },
       [](const RunConfig& c) { return fmt_scalar(c.model.sensor.unit_width_px); }},
      SIZE_FIELD("patch_size", true, model.sensor.patch_size),
      SIZE_FIELD("coarse_factor", true, model.sensor.coarse_factor),
      SIZE_FIELD("context_size", true, model.sensor.context_size),
      SCALAR_FIELD("lr", train.lr),
      SCALAR_FIELD("lr_decay", train.lr_decay),
      SCALAR_FIELD("momentum", train.momentum),
      SIZE_FIELD("batch_size", false, train.batch_size),
      SCALAR_FIELD("location_std", train.location_std),
      SCALAR_FIELD("lambda", train.lambda),
      SIZE_FIELD("mc_samples", false, train.mc_samples),
      SIZE_FIELD("epochs", false, train.epochs),
      {"seed", false, [](RunConfig& c, const std::string& v) { c.train.seed = parse_size("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      STRING_FIELD("mnist_dir", mnist_dir),
      SIZE_FIELD("train_count", false, train_count),
      SIZE_FIELD("test_count", false, test_count),
      {"data_seed", false, [](RunConfig& c, const std::string& v) { c.data_seed = parse_size("data_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.data_seed); }},
      SIZE_FIELD("canvas_h", false, canvas_h),
      SIZE_FIELD("canvas_w", false, canvas_w),
      BOOL_FIELD("reversed", false, reversed),
      SIZE_FIELD("checkpoint_every", false, checkpoint_every),
      SIZE_FIELD("eval_every", false, eval_every),
      STRING_FIELD("train_data", train_data),
      STRING_FIELD("test_data", test_data),
  };
  return table;
}

#undef SIZE_FIELD
#undef SCALAR_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  for (auto& ch : key)
    if (ch == '-') ch = '_';
  // `--no-context` on the command line
  if (key == "context") return "use_context";
  return key;
}

Overrides parse_lines(const std::string& text) {
  Overrides out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(normalize_key(trim(line.substr(0, eq))), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply(RunConfig& cfg, const Overrides& kv) {
  for (const auto& [k, v] : kv) {
    const std::string key = normalize_key(k);
    if (key == "task") continue;
    const Field* f = find_field(key);
    if (!f) throw ConfigError(key + ": unknown key");
    f->set(cfg, v);
  }
}

}  // namespace

GeneratorSpec RunConfig::generator(std::uint64_t seed) const {
  GeneratorSpec spec;
  spec.task = task;
  spec.seed = seed;
  spec.canvas_h = canvas_h;
  spec.canvas_w = canvas_w;
  spec.max_digits = model.sequential ? model.max_targets : 2;
  spec.reversed = reversed;
  return spec;
}

RunConfig task_preset(Task task) {
  RunConfig c;
  c.task = task;
  c.model.glimpse_dim = 256;
  c.model.lstm_units = 256;
  c.model.context_conv = {{16, 5, 2, 0}, {16, 3, 2, 0}, {32, 3, 1, 0}};
  switch (task) {
    case Task::pairs:
    case Task::addition:
      c.model.num_classes = task == Task::pairs ? 55 : 19;
      c.model.glimpse_kind = GlimpseNetKind::fully_connected;
      c.model.sensor = {20, 12, 3, 32};
      c.model.glimpses_per_target = 4;
      c.model.max_targets = 1;
      c.canvas_h = c.canvas_w = 100;
      break;
    case Task::sequence:
    case Task::sequence_large:
      c.model.num_classes = 11;
      c.model.sequential = true;
      c.model.glimpse_kind = GlimpseNetKind::conv;
      c.model.glimpse_conv = {{16, 5, 2, 0}, {16, 3, 1, 0}, {32, 3, 1, 0}};
      c.model.sensor = {12, 20, 2, 32};
      c.model.glimpses_per_target = 3;
      c.model.max_targets = 3;
      c.canvas_h = 36;
      c.canvas_w = 100;
      break;
  }
  return c;
}

RunConfig parse_config_text(const std::string& text, const Overrides& overrides) {
  const Overrides file = parse_lines(text);
  std::string task;
  for (const auto& [k, v] : file)
    if (k == "task") task = v;
  for (const auto& [k, v] : overrides)
    if (normalize_key(k) == "task") task = v;
  if (task.empty()) throw ConfigError("task: missing required key");
  RunConfig cfg;
  try {
    cfg = task_preset(parse_task(task));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  apply(cfg, file);
  apply(cfg, overrides);
  try {
    cfg.model.validate();
    cfg.train.validate();
    if (!(cfg.train.lr > 0)) throw std::invalid_argument("lr: must be positive for a training run");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::string arch;
  for (const auto& f : fields())
    if (f.architecture) arch += f.key + "=" + f.get(cfg) + "\n";
  return fnv1a(arch);
}

}  // namespace dram
