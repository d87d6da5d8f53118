#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dram/commands.hpp"
#include "dram/kernels.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace dram;
using namespace dram::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dram_test_cli";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kMnist = std::string(DRAM_SOURCE_DIR) + "/data/mnist";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DRAM_CLI) + " " + args + " > " + scratch("cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const std::string& text, const Overrides& o = {}) {
  try {
    parse_config_text(text, o);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Small pairs model that trains in well under a second per epoch.
RunConfig small_config() {
  return parse_config_text(
      "task = pairs\nglimpse_dim = 8\nlstm_units = 8\nemission_hidden = 6\nclassifier_hidden = 6\n"
      "baseline_hidden = 6\ncontext_size = 8\ncontext_conv = 4:3:2:0\nglimpses = 2\nbatch_size = 8\n"
      "epochs = 4\nseed = 3\ncheckpoint_every = 2\n");
}

const Dataset& small_pairs() {
  static const Dataset ds = gen_pairs_task(testing::synthetic_digits(5, 2), 24, 5);
  return ds;
}

}  // namespace

TEST_CASE("task presets carry the published defaults") {
  const RunConfig c = parse_config_text("", {{"task", "pairs"}});
  CHECK(c.task == Task::pairs);
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.momentum == 0.9);
  CHECK(c.train.batch_size == 128);
  CHECK(c.train.location_std == 0.03);
  CHECK(c.train.lr_decay == 0.97);
  CHECK(c.model.sensor.unit_width_px == 20);
  CHECK(c.model.num_classes == 55);
  CHECK(c.model.glimpses_per_target == 4);
  CHECK(c.model.use_context);

  const RunConfig a = parse_config_text("task = addition\n");
  CHECK(a.model.num_classes == 19);
  const RunConfig s = parse_config_text("task = sequence\n");
  CHECK(s.model.sequential);
  CHECK(s.model.num_classes == 11);
  CHECK(s.model.sensor.unit_width_px == 12);
  CHECK(s.canvas_h == 36);
  CHECK(s.canvas_w == 100);
  CHECK(s.model.glimpse_kind == GlimpseNetKind::conv);
}

TEST_CASE("config errors name the key") {
  std::string msg = config_error("task = pairs\nlr = abc\n");
  CHECK(msg.rfind("lr", 0) == 0);
  CHECK(msg.find("abc") != std::string::npos);
  msg = config_error("task = pairs\nbogus = 1\n");
  CHECK(msg.rfind("bogus", 0) == 0);
  msg = config_error("lr = 0.1\n");
  CHECK(msg.rfind("task", 0) == 0);
  msg = config_error("task = pairs\nlstm_units = 0\n");
  CHECK(!msg.empty());
  msg = config_error("task = pairs\nuse_context = maybe\n");
  CHECK(msg.rfind("use_context", 0) == 0);
  msg = config_error("task = pairs\n", {{"lr", "0"}});
  CHECK(msg.rfind("lr", 0) == 0);
}

TEST_CASE("overrides win and the resolved config round-trips") {
  const RunConfig c = parse_config_text("task = pairs\nlstm_units = 32\n# comment\n\n", {{"lstm-units", "64"}, {"use_context", "false"}});
  CHECK(c.model.lstm_units == 64);
  CHECK(!c.model.use_context);
  const std::string text = to_text(c);
  CHECK(text.find("lstm_units = 64\n") != std::string::npos);
  CHECK(to_text(parse_config_text(text)) == text);
  CHECK(config_keys().size() >= 30);

  RunConfig d = c;
  d.train.lr = 0.5;
  CHECK(config_hash(d) == config_hash(c));
  d.model.lstm_units = 65;
  CHECK(config_hash(d) != config_hash(c));
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("checkpoint round trip") {
  const RunConfig cfg = small_config();
  Rng rng(4);
  const ParamSet params = init_params(cfg.model, rng);
  auto opt = OptimizerState::for_params(params, 0.02, 0.9, 0.97);
  opt.velocity[0].fill(0.125);
  const Checkpoint ck = make_checkpoint(cfg, 7, rng, params, opt);
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.params == params);
  CHECK(back.optimizer.velocity == opt.velocity);
  CHECK(back.optimizer.learning_rate == 0.02);
  CHECK(back.epoch == 7);
  CHECK(back.rng.key == rng.state().key);
  CHECK(back.rng.counter == rng.state().counter);
  CHECK(to_text(back.config()) == to_text(cfg));

  save_checkpoint(ck, scratch("a.bin"));
  const Checkpoint loaded = load_checkpoint(scratch("a.bin"), config_hash(cfg));
  save_checkpoint(loaded, scratch("b.bin"));
  CHECK(slurp(scratch("a.bin")) == slurp(scratch("b.bin")));

  CHECK_THROWS_AS(load_checkpoint(scratch("a.bin"), config_hash(cfg) + 1), CheckpointError);
  CHECK_NOTHROW(load_checkpoint(scratch("a.bin"), config_hash(cfg) + 1, true));
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.bin")), CheckpointError);
}

TEST_CASE("training is deterministic and resumable") {
  kernels::set_serial(true);
  const RunConfig cfg = small_config();
  const fs::path a = scratch("run_a"), b = scratch("run_b"), c = scratch("run_c");
  for (const auto& d : {a, b, c}) fs::remove_all(d);
  const Checkpoint fa = train_run(cfg, small_pairs(), &small_pairs(), a, nullptr, std::nullopt, nullptr);
  train_run(cfg, small_pairs(), &small_pairs(), b, nullptr, std::nullopt, nullptr);
  CHECK(fa.epoch == 4);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "final.bin") == slurp(b / "final.bin"));
  CHECK(fs::exists(a / "ckpt-002.bin"));
  CHECK(fs::exists(a / "ckpt-004.bin"));
  CHECK(fs::exists(a / "config.txt"));
  CHECK(slurp(a / "config.txt") == to_text(cfg));

  const std::string csv = slurp(a / "metrics.csv");
  CHECK(csv.rfind(std::string(kMetricsVersion) + "\n" + kMetricsHeader + "\n", 0) == 0);
  CHECK(csv.find("\n4,train,") != std::string::npos);

  // interrupted after 2 epochs, then resumed
  const Checkpoint partial = train_run(cfg, small_pairs(), &small_pairs(), c, nullptr, 2, nullptr);
  CHECK(partial.epoch == 2);
  CHECK(!fs::exists(c / "final.bin"));
  const Checkpoint latest = load_checkpoint(c / "latest.bin", config_hash(cfg));
  train_run(cfg, small_pairs(), &small_pairs(), c, &latest, std::nullopt, nullptr);
  CHECK(slurp(c / "metrics.csv") == slurp(a / "metrics.csv"));
  CHECK(slurp(c / "final.bin") == slurp(a / "final.bin"));
  kernels::set_serial(false);
}

TEST_CASE("eval modes") {
  CHECK(EvalMode::parse("det").kind == EvalMode::det);
  CHECK(EvalMode::parse("mc:10").samples == 10);
  CHECK(EvalMode::parse("mc:10").str() == "mc:10");
  CHECK(EvalMode::parse("fb").kind == EvalMode::fb);
  CHECK(EvalMode::parse("focus").kind == EvalMode::focus);
  CHECK_THROWS_AS(EvalMode::parse("mc:0"), UsageError);
  CHECK_THROWS_AS(EvalMode::parse("mc:x"), UsageError);
  CHECK_THROWS_AS(EvalMode::parse("beam"), UsageError);

  const RunConfig cfg = small_config();
  Rng rng(6);
  const Model m{cfg, init_params(cfg.model, rng)};
  CHECK_THROWS_AS(predict(m, small_pairs().samples, EvalMode::parse("fb")), UsageError);
  const auto p1 = predict(m, small_pairs().samples, {});
  const auto p2 = predict(m, small_pairs().samples, {});
  CHECK(score(p1, small_pairs().samples).seq_error == score(p2, small_pairs().samples).seq_error);
  const auto mc1 = predict(m, small_pairs().samples, EvalMode::parse("mc:3"), nullptr, 9);
  const auto mc2 = predict(m, small_pairs().samples, EvalMode::parse("mc:3"), nullptr, 9);
  for (std::size_t i = 0; i < mc1.size(); ++i) CHECK(mc1[i].log_probs == mc2[i].log_probs);
}

TEST_CASE("scoring") {
  std::vector<LabeledImage> samples(4);
  samples[0].labels = {1, 2};
  samples[1].labels = {3};
  samples[2].labels = {4, 5, 6};
  samples[3].labels = {7};
  std::vector<SequencePrediction> preds(4);
  for (std::size_t i = 0; i < 4; ++i) preds[i].labels.assign(samples[i].labels.begin(), samples[i].labels.end());
  EvalReport r = score(preds, samples);
  CHECK(r.seq_error == 0);
  CHECK(r.position_accuracy == std::vector<Scalar>{1, 1, 1});

  preds[0].labels = {1, 2, 9};  // over-long counts as wrong
  preds[2].labels = {4, 0, 6};
  preds[3].labels = {};
  r = score(preds, samples);
  CHECK(r.seq_error == 0.75);
  CHECK(r.position_accuracy[0] == 0.75);
  CHECK(r.position_accuracy[1] == 0.5);
  CHECK(r.position_accuracy[2] == 1);
  CHECK_THROWS(score(std::vector<SequencePrediction>(3), samples));
}

TEST_CASE("trajectory dump schema") {
  RunConfig cfg = parse_config_text(
      "task = sequence\nglimpse_dim = 8\nlstm_units = 8\nemission_hidden = 6\nclassifier_hidden = 6\n"
      "baseline_hidden = 6\nglimpse_conv = none\nglimpse_net = fc\ncontext_size = 8\ncontext_conv = 4:3:2:0\n");
  Rng rng(7);
  const Model m{cfg, init_params(cfg.model, rng)};
  const Dataset ds = gen_sequence_task(testing::synthetic_digits(3, 3), 5, 3, 36, 100, 8);
  const auto preds = predict(m, ds.samples, {});
  std::stringstream out;
  write_trajectories(out, preds, ds.samples, cfg.model.sensor);
  std::string line;
  std::size_t records = 0, labelled = 0;
  while (std::getline(out, line)) {
    const auto rec = nlohmann::json::parse(line);
    ++records;
    CHECK(rec.contains("image_id"));
    CHECK(rec["step"].get<std::size_t>() < 16);
    CHECK(rec["loc_xy"].size() == 2);
    CHECK(rec["pixel_rc"].size() == 2);
    if (rec.contains("predicted_label")) {
      ++labelled;
      CHECK(rec["log_probs"].size() == 11);
      CHECK((rec["step"].get<std::size_t>() + 1) % cfg.model.glimpses_per_target == 0);
    } else {
      CHECK(!rec.contains("log_probs"));
    }
  }
  std::size_t glimpses = 0, slots = 0;
  for (const auto& p : preds) {
    glimpses += p.trajectory.size();
    slots += p.slot_predictions.size();
  }
  CHECK(records == glimpses);
  CHECK(labelled == slots);
}

TEST_CASE("command line") {
  const std::string mnist = " --mnist_dir " + kMnist;
  CHECK(run_cli("gen --task pairs --count 30 --seed 3 --out " + scratch("g1.bin").string() + mnist) == 0);
  CHECK(run_cli("gen --task pairs --count 30 --seed 3 --out " + scratch("g2.bin").string() + mnist) == 0);
  CHECK(slurp(scratch("g1.bin")) == slurp(scratch("g2.bin")));
  CHECK(slurp(scratch("cli.log")).find("label histogram") != std::string::npos);
  CHECK(run_cli("gen --task pairs --count 0 --out " + scratch("g0.bin").string() + mnist) == 0);
  CHECK(slurp(scratch("g0.bin")).size() == 28);
  CHECK(run_cli("gen --task triples --count 3 --out " + scratch("g3.bin").string() + mnist) == 1);
  CHECK(run_cli("frobnicate") == 1);

  const std::string small =
      " --glimpse_dim 8 --lstm_units 8 --emission_hidden 6 --classifier_hidden 6 --baseline_hidden 6"
      " --context_size 8 --context_conv 4:3:2:0 --train_count 16 --batch_size 8 --quiet" + mnist;
  CHECK(run_cli("train --task pairs --lr abc --out " + scratch("bad").string() + small) == 1);
  CHECK(slurp(scratch("cli.log")).find("lr") != std::string::npos);
  CHECK(run_cli("train --task pairs --wings 2 --out " + scratch("bad").string() + small) == 1);

  for (const char* d : {"t1", "t2"}) {
    fs::remove_all(scratch(d));
    CHECK(run_cli("--serial train --task pairs --epochs 1 --seed 7 --out " + scratch(d).string() + small) == 0);
  }
  CHECK(slurp(scratch("t1") / "metrics.csv") == slurp(scratch("t2") / "metrics.csv"));
  fs::remove_all(scratch("t3"));
  CHECK(run_cli("train --task pairs --no-context --epochs 1 --out " + scratch("t3").string() + small) == 0);
  CHECK(slurp(scratch("t3") / "config.txt").find("use_context = false") != std::string::npos);
  CHECK(run_cli("train --resume " + (scratch("t1") / "final.bin").string() + " --lstm_units 9 --epochs 2 --out " +
                scratch("t1").string()) == 1);

  const std::string ck = (scratch("t1") / "final.bin").string();
  const std::string data = scratch("g1.bin").string();
  CHECK(run_cli("eval --checkpoint " + ck + " --data " + data + " --mode fb") == 1);
  CHECK(run_cli("eval --checkpoint " + ck + " --data " + data + " --mode det") == 0);
  const std::string first = slurp(scratch("cli.log"));
  CHECK(run_cli("eval --checkpoint " + ck + " --data " + data + " --mode det --dump-trajectories " +
                scratch("traj.jsonl").string()) == 0);
  CHECK(slurp(scratch("cli.log")) == first);
  CHECK(first.find("seq_error") != std::string::npos);
  CHECK(!slurp(scratch("traj.jsonl")).empty());
  CHECK(run_cli("eval --checkpoint " + scratch("nope.bin").string() + " --data " + data) == 2);
  CHECK(run_cli("inspect-ckpt " + ck) == 0);
  CHECK(slurp(scratch("cli.log")).find("config_hash") != std::string::npos);
}
