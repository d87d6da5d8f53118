#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dram/checkpoint.hpp"
#include "dram/config.hpp"
#include "dram/decoder.hpp"

namespace dram::cli {

/// Bad command-line usage; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kSuccess = 0, kUsage = 1, kRuntime = 2 };

/// Runs `body`, mapping usage and config errors to 1 and everything else to 2.
/// Diagnostics go to `err`.
template <typename F>
int guarded(std::ostream& err, F&& body);

constexpr const char* kMetricsVersion = "# dram-metrics v1";
constexpr const char* kMetricsHeader = "epoch,split,loss,reward_rate,seq_error,lr";

// -- data -------------------------------------------------------------------

MnistSet load_mnist_split(const std::string& dir, bool train);
/// Training or test split described by the config; test digits come from the
/// held-out MNIST file and a different generator seed.
Dataset load_split(const RunConfig& cfg, bool train);

int cmd_gen(Task task, std::size_t count, std::uint64_t seed, const std::filesystem::path& out,
            const Overrides& overrides, std::ostream& log);

// -- training ---------------------------------------------------------------

struct TrainArgs {
  std::optional<std::filesystem::path> config_path;
  Overrides overrides;
  std::filesystem::path out_dir = "run";
  std::optional<std::filesystem::path> resume;
  bool allow_hash_mismatch = false;
  /// Stop once this many epochs are complete (simulates an interrupted run).
  std::optional<std::size_t> stop_after;
  bool quiet = false;
};

/// Trains and writes config.txt, metrics.csv, periodic ckpt-NNN.bin and
/// final.bin into out_dir.
int cmd_train(const TrainArgs& args, std::ostream& log);

/// Core of cmd_train on already loaded data. Returns the final checkpoint.
Checkpoint train_run(const RunConfig& cfg, const Dataset& train, const Dataset* test,
                     const std::filesystem::path& out_dir, const Checkpoint* resume,
                     std::optional<std::size_t> stop_after, std::ostream* log);

// -- evaluation -------------------------------------------------------------

struct EvalMode {
  enum Kind { det, mc, fb, focus } kind = det;
  std::size_t samples = 1;  ///< M for mc
  static EvalMode parse(const std::string& text);
  std::string str() const;
};

struct Model {
  RunConfig config;
  ParamSet params;
  static Model from_checkpoint(const Checkpoint& c) { return {c.config(), c.params}; }
};

struct EvalReport {
  std::size_t count = 0;
  Scalar seq_error = 0;
  std::vector<Scalar> position_accuracy;  ///< per true label position
  std::size_t max_glimpses = 0;           ///< most glimpses used by any decode
};

/// Predictions for every sample. fb needs `backward`; focus crops
/// canvas_h x canvas_w of the forward model's config.
std::vector<SequencePrediction> predict(const Model& forward, const std::vector<LabeledImage>& samples,
                                        const EvalMode& mode, const Model* backward = nullptr,
                                        std::uint64_t seed = 1);

/// Whole-sequence error (every label and the length must match) and
/// per-position accuracy.
EvalReport score(const std::vector<SequencePrediction>& preds, const std::vector<LabeledImage>& samples);

/// JSON-lines, one record per glimpse: image_id, step, loc_xy, pixel_rc and,
/// on steps followed by a classification, predicted_label and log_probs.
void write_trajectories(std::ostream& out, const std::vector<SequencePrediction>& preds,
                        const std::vector<LabeledImage>& samples, const sensor::SensorConfig& sensor);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> backward_checkpoint;
  std::optional<std::filesystem::path> data;  ///< dataset file; default is the config's test split
  std::string mode = "det";
  std::optional<std::filesystem::path> dump_trajectories;
  std::optional<std::size_t> limit;
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& args, std::ostream& out);

int cmd_inspect(const std::filesystem::path& checkpoint, std::ostream& out);

}  // namespace dram::cli

#include "dram/commands_inl.hpp"
