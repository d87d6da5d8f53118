#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dram/commands.hpp"
#include "dram/kernels.hpp"

namespace {

using dram::Overrides;

// `--key value`, `--key=value`, `--flag` (true) and `--no-flag` (false).
Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3) throw dram::cli::UsageError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(key, extras[++i]);
    } else if (key.rfind("no-", 0) == 0 || key.rfind("no_", 0) == 0) {
      out.emplace_back(key.substr(3), "false");
    } else {
      out.emplace_back(key, "true");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep recurrent attention model: dataset generation, training and evaluation"};
  app.require_subcommand(1);
  bool serial = false;
  app.add_flag("--serial", serial, "single-threaded, bit-exact execution");

  auto* gen = app.add_subcommand("gen", "generate a dataset file");
  std::string gen_task, gen_out;
  std::size_t gen_count = 0;
  std::uint64_t gen_seed = 1;
  gen->add_option("--task", gen_task, "pairs, addition, sequence or sequence-large")->required();
  gen->add_option("--count", gen_count, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output file")->required();
  gen->allow_extras();

  auto* train = app.add_subcommand("train", "train a model; other --key value pairs override config keys");
  dram::cli::TrainArgs targs;
  std::string config_path, resume_path, out_dir = "run";
  std::size_t stop_after = 0;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--out", out_dir, "run directory");
  train->add_option("--resume", resume_path, "checkpoint to continue from");
  train->add_flag("--allow-hash-mismatch", targs.allow_hash_mismatch, "resume despite an architecture change");
  train->add_option("--stop-after", stop_after, "stop once this many epochs are complete");
  train->add_flag("--quiet", targs.quiet, "no progress output");
  train->allow_extras();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  dram::cli::EvalArgs eargs;
  std::string backward, data, dump;
  std::size_t limit = 0;
  eval->add_option("--checkpoint", eargs.checkpoint, "model checkpoint")->required();
  eval->add_option("--backward", backward, "right-to-left model checkpoint (mode fb)");
  eval->add_option("--data", data, "dataset file (default: the config's test split)");
  eval->add_option("--mode", eargs.mode, "det, mc:M, fb or focus");
  eval->add_option("--dump-trajectories", dump, "JSON-lines trajectory output");
  eval->add_option("--limit", limit, "evaluate only the first n samples");
  eval->add_option("--seed", eargs.seed, "seed for stochastic decodes");

  auto* inspect = app.add_subcommand("inspect-ckpt", "print a checkpoint summary");
  std::string inspect_path;
  inspect->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return dram::cli::kUsage;
  }
  dram::kernels::set_serial(serial);

  return dram::cli::guarded(std::cerr, [&]() -> int {
    if (*gen) {
      dram::Task task;
      try {
        task = dram::parse_task(gen_task);
      } catch (const std::invalid_argument& e) {
        throw dram::cli::UsageError(e.what());
      }
      return dram::cli::cmd_gen(task, gen_count, gen_seed, gen_out,
                                parse_overrides(gen->remaining()), std::cout);
    }
    if (*train) {
      if (!config_path.empty()) targs.config_path = config_path;
      if (!resume_path.empty()) targs.resume = resume_path;
      if (stop_after) targs.stop_after = stop_after;
      targs.out_dir = out_dir;
      targs.overrides = parse_overrides(train->remaining());
      return dram::cli::cmd_train(targs, std::cout);
    }
    if (*eval) {
      if (!backward.empty()) eargs.backward_checkpoint = backward;
      if (!data.empty()) eargs.data = data;
      if (!dump.empty()) eargs.dump_trajectories = dump;
      if (limit) eargs.limit = limit;
      return dram::cli::cmd_eval(eargs, std::cout);
    }
    return dram::cli::cmd_inspect(inspect_path, std::cout);
  });
}
