#include "dram/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dram/estimator.hpp"
#include "json.hpp"

namespace dram::cli {

namespace {

constexpr std::size_t kDecodeChunk = 256;
constexpr std::uint64_t kTestSeedOffset = 0x7e57;

std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {stem + ".gz", stem}) {
    const auto p = dir / name;
    if (std::filesystem::exists(p)) return p;
  }
  throw FormatError("missing " + (dir / stem).string() + "[.gz] (run tools/fetch_mnist.sh)");
}

std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out.write(text.data(), static_cast<std::streamsize>(text.size())))
    throw std::runtime_error("cannot write " + path.string());
}

/// Existing metrics rows up to and including `epoch`, header included.
std::string metrics_prefix(const std::filesystem::path& path, std::uint64_t epoch) {
  std::string out = std::string(kMetricsVersion) + "\n" + kMetricsHeader + "\n";
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
    if (std::stoull(line.substr(0, line.find(','))) <= epoch) out += line + "\n";
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::vector<std::uint8_t>& labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace

MnistSet load_mnist_split(const std::string& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  return load_mnist_idx(find_idx(dir, prefix + "-images-idx3-ubyte"), find_idx(dir, prefix + "-labels-idx1-ubyte"));
}

Dataset load_split(const RunConfig& cfg, bool train) {
  const std::string& file = train ? cfg.train_data : cfg.test_data;
  if (!file.empty()) return load_dataset(file);
  const MnistSet mnist = load_mnist_split(cfg.mnist_dir, train);
  const std::uint64_t seed = train ? cfg.data_seed : cfg.data_seed + kTestSeedOffset;
  return generate(mnist, cfg.generator(seed), train ? cfg.train_count : cfg.test_count);
}

int cmd_gen(Task task, std::size_t count, std::uint64_t seed, const std::filesystem::path& out,
            const Overrides& overrides, std::ostream& log) {
  Overrides with_task = overrides;
  with_task.emplace_back("task", task_name(task));
  const RunConfig cfg = parse_config_text("", with_task);
  const MnistSet mnist = load_mnist_split(cfg.mnist_dir, true);
  const Dataset ds = generate(mnist, cfg.generator(seed), count);
  save_dataset(ds, out);
  log << "wrote " << ds.size() << " samples (" << ds.height << "x" << ds.width << ", K=" << ds.num_classes
      << ") to " << out.string() << "\nlabel histogram:";
  for (auto n : label_histogram(ds)) log << ' ' << n;
  log << "\n";
  return kSuccess;
}

Checkpoint train_run(const RunConfig& cfg, const Dataset& train, const Dataset* test,
                     const std::filesystem::path& out_dir, const Checkpoint* resume,
                     std::optional<std::size_t> stop_after, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "config.txt", to_text(cfg));

  const Rng run_rng(cfg.train.seed);
  ParamSet params;
  OptimizerState opt;
  std::uint64_t epoch = 0;
  if (resume) {
    params = resume->params;
    opt = resume->optimizer;
    epoch = resume->epoch;
  } else {
    Rng init = run_rng.split(0);
    params = init_params(cfg.model, init);
    opt = OptimizerState::for_params(params, cfg.train.lr, cfg.train.momentum, cfg.train.lr_decay);
  }

  const auto metrics_path = out_dir / "metrics.csv";
  std::string metrics = resume ? metrics_prefix(metrics_path, epoch)
                               : std::string(kMetricsVersion) + "\n" + kMetricsHeader + "\n";
  write_file(metrics_path, metrics);
  std::ofstream csv(metrics_path, std::ios::app);

  while (epoch < cfg.train.epochs && !(stop_after && epoch >= *stop_after)) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochMetrics m = train_epoch(train.samples, cfg.model, params, opt, cfg.train, epoch);
    ++epoch;
    csv << epoch << ",train," << fmt(m.loss) << ',' << fmt(m.reward_rate) << ',' << fmt(m.seq_error) << ','
        << fmt(m.lr) << "\n";
    std::string test_note;
    if (test && cfg.eval_every && epoch % cfg.eval_every == 0) {
      const EvalReport r = score(predict({cfg, params}, test->samples, {}), test->samples);
      Scalar acc = 0;
      for (Scalar a : r.position_accuracy) acc += a;
      if (!r.position_accuracy.empty()) acc /= static_cast<Scalar>(r.position_accuracy.size());
      csv << epoch << ",test,," << fmt(acc) << ',' << fmt(r.seq_error) << ',' << fmt(m.lr) << "\n";
      test_note = " test_err " + fmt(r.seq_error);
    }
    csv.flush();
    const Checkpoint ck = make_checkpoint(cfg, epoch, run_rng, params, opt);
    save_checkpoint(ck, out_dir / "latest.bin");
    if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt-%03llu.bin", static_cast<unsigned long long>(epoch));
      save_checkpoint(ck, out_dir / name);
    }
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "epoch " << epoch << " loss " << fmt(m.loss) << " reward " << fmt(m.reward_rate) << " err "
           << fmt(m.seq_error) << test_note << " lr " << fmt(m.lr) << " (" << fmt(secs) << " s)" << std::endl;
    }
  }
  Checkpoint final_ckpt = make_checkpoint(cfg, epoch, run_rng, params, opt);
  if (epoch >= cfg.train.epochs) save_checkpoint(final_ckpt, out_dir / "final.bin");
  return final_ckpt;
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
  RunConfig cfg;
  std::optional<Checkpoint> resume;
  if (args.resume) {
    resume = load_checkpoint(*args.resume);
    cfg = args.config_path ? parse_config(*args.config_path, args.overrides)
                           : parse_config_text(resume->config_text, args.overrides);
    if (config_hash(cfg) != resume->config_hash && !args.allow_hash_mismatch)
      throw UsageError("resume: config hash mismatch with " + args.resume->string() +
                       " (pass --allow-hash-mismatch to override)");
  } else if (args.config_path) {
    cfg = parse_config(*args.config_path, args.overrides);
  } else {
    cfg = parse_config_text("", args.overrides);
  }
  if (!args.quiet) log << "resolved config:\n" << to_text(cfg);
  const Dataset train = load_split(cfg, true);
  std::optional<Dataset> test;
  if (cfg.eval_every) test = load_split(cfg, false);
  train_run(cfg, train, test ? &*test : nullptr, args.out_dir, resume ? &*resume : nullptr, args.stop_after,
            args.quiet ? nullptr : &log);
  return kSuccess;
}

EvalMode EvalMode::parse(const std::string& text) {
  EvalMode m;
  if (text == "det") {
    m.kind = det;
  } else if (text == "fb") {
    m.kind = fb;
  } else if (text == "focus") {
    m.kind = focus;
  } else if (text.rfind("mc:", 0) == 0) {
    m.kind = mc;
    const std::string n = text.substr(3);
    if (n.empty() || n.find_first_not_of("0123456789") != std::string::npos || std::stoull(n) < 1)
      throw UsageError("mode " + text + ": M must be a positive integer");
    m.samples = std::stoull(n);
  } else {
    throw UsageError("unknown mode '" + text + "' (det, mc:M, fb, focus)");
  }
  return m;
}

std::string EvalMode::str() const {
  switch (kind) {
    case det:
      return "det";
    case mc:
      return "mc:" + std::to_string(samples);
    case fb:
      return "fb";
    case focus:
      return "focus";
  }
  return "?";
}

std::vector<SequencePrediction> predict(const Model& forward, const std::vector<LabeledImage>& samples,
                                        const EvalMode& mode, const Model* backward, std::uint64_t seed) {
  const ModelConfig& mc = forward.config.model;
  auto det_all = [&](const Model& model) {
    std::vector<SequencePrediction> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += kDecodeChunk) {
      std::vector<const Tensor*> images;
      for (std::size_t i = start; i < std::min(samples.size(), start + kDecodeChunk); ++i)
        images.push_back(&samples[i].pixels);
      for (auto& p : decode_batch(images, model.params, model.config.model, {})) out.push_back(std::move(p));
    }
    return out;
  };

  switch (mode.kind) {
    case EvalMode::det:
      return det_all(forward);
    case EvalMode::mc: {
      std::vector<SequencePrediction> out;
      const Rng base(seed);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        Rng rng = base.split(i);
        out.push_back(mc_average_predict(samples[i].pixels, forward.params, mc, mode.samples,
                                         forward.config.train.location_std, rng));
      }
      return out;
    }
    case EvalMode::fb: {
      if (!backward) throw UsageError("mode fb needs a backward checkpoint");
      auto fwd = det_all(forward);
      const auto bwd = det_all(*backward);
      const std::optional<std::size_t> eos = mc.sequential ? std::optional(mc.eos_class()) : std::nullopt;
      for (std::size_t i = 0; i < fwd.size(); ++i) fwd[i] = forward_backward_merge(fwd[i], bwd[i], eos);
      return fwd;
    }
    case EvalMode::focus: {
      std::vector<SequencePrediction> out;
      for (const auto& s : samples)
        out.push_back(
            focus_refine(s.pixels, forward.params, mc, forward.config.canvas_h, forward.config.canvas_w).refined);
      return out;
    }
  }
  return {};
}

EvalReport score(const std::vector<SequencePrediction>& preds, const std::vector<LabeledImage>& samples) {
  if (preds.size() != samples.size()) throw std::invalid_argument("score: prediction count mismatch");
  EvalReport r;
  r.count = samples.size();
  std::vector<std::size_t> hits, totals;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto truth = to_sizes(samples[i].labels);
    const auto& got = preds[i].labels;
    if (got != truth) ++wrong;
    if (truth.size() > totals.size()) {
      totals.resize(truth.size(), 0);
      hits.resize(truth.size(), 0);
    }
    for (std::size_t p = 0; p < truth.size(); ++p) {
      ++totals[p];
      if (p < got.size() && got[p] == truth[p]) ++hits[p];
    }
    r.max_glimpses = std::max(r.max_glimpses, preds[i].trajectory.size());
  }
  r.seq_error = r.count ? static_cast<Scalar>(wrong) / static_cast<Scalar>(r.count) : Scalar(0);
  for (std::size_t p = 0; p < totals.size(); ++p)
    r.position_accuracy.push_back(static_cast<Scalar>(hits[p]) / static_cast<Scalar>(totals[p]));
  return r;
}

void write_trajectories(std::ostream& out, const std::vector<SequencePrediction>& preds,
                        const std::vector<LabeledImage>& samples, const sensor::SensorConfig& sensor) {
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const std::size_t h = samples[i].pixels.dim(1), w = samples[i].pixels.dim(2);
    for (std::size_t step = 0; step < p.trajectory.size(); ++step) {
      const auto px = sensor::loc_to_pixels(p.trajectory[step], h, w, sensor);
      nlohmann::json rec;
      rec["image_id"] = samples[i].meta.index;
      rec["step"] = step;
      rec["loc_xy"] = {p.trajectory[step].x, p.trajectory[step].y};
      rec["pixel_rc"] = {px.row, px.col};
      for (std::size_t s = 0; s < p.prediction_steps.size(); ++s) {
        if (p.prediction_steps[s] != step + 1) continue;
        rec["predicted_label"] = p.slot_predictions[s];
        const auto lp = p.slot_log_probs[s].data();
        rec["log_probs"] = std::vector<Scalar>(lp.begin(), lp.end());
      }
      out << rec.dump() << "\n";
    }
  }
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const EvalMode mode = EvalMode::parse(args.mode);
  if (mode.kind == EvalMode::fb && !args.backward_checkpoint)
    throw UsageError("mode fb needs --backward <checkpoint>");
  const Model fwd = Model::from_checkpoint(load_checkpoint(args.checkpoint));
  std::optional<Model> bwd;
  if (args.backward_checkpoint) bwd = Model::from_checkpoint(load_checkpoint(*args.backward_checkpoint));
  Dataset data = args.data ? load_dataset(*args.data) : load_split(fwd.config, false);
  if (args.limit && *args.limit < data.samples.size()) data.samples.resize(*args.limit);

  const auto preds = predict(fwd, data.samples, mode, bwd ? &*bwd : nullptr, args.seed);
  const EvalReport r = score(preds, data.samples);
  out << "mode " << mode.str() << "\ncount " << r.count << "\nseq_error " << fmt(r.seq_error)
      << "\nposition_accuracy";
  for (Scalar a : r.position_accuracy) out << ' ' << fmt(a);
  out << "\nmax_glimpses " << r.max_glimpses << "\n";
  if (args.dump_trajectories) {
    std::ofstream dump(*args.dump_trajectories);
    if (!dump) throw std::runtime_error("cannot write " + args.dump_trajectories->string());
    write_trajectories(dump, preds, data.samples, fwd.config.model.sensor);
  }
  return kSuccess;
}

int cmd_inspect(const std::filesystem::path& checkpoint, std::ostream& out) {
  const Checkpoint c = load_checkpoint(checkpoint);
  out << "format_version " << Checkpoint::kVersion << "\nconfig_hash " << c.config_hash << "\nepoch " << c.epoch
      << "\nrng " << c.rng.key << ":" << c.rng.counter << "\nlearning_rate " << fmt(c.optimizer.learning_rate)
      << "\nmomentum " << fmt(c.optimizer.momentum) << "\nparameters " << c.params.element_count() << "\n";
  for (std::size_t i = 0; i < c.params.size(); ++i)
    out << "  " << c.params.name(i) << ' ' << shape_str(c.params[i].shape()) << "\n";
  out << "config:\n" << c.config_text;
  return kSuccess;
}

}  // namespace dram::cli
