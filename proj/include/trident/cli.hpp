#pragma once

// Run configuration (INI with sections) and the operator commands behind the
// `trident` executable.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trident/episodic.hpp"
#include "trident/metatrain.hpp"
#include "trident/training.hpp"

namespace trident {

/// Invalid or unknown configuration; the message names the section and key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | folder
  std::filesystem::path root;      // folder datasets
  SyntheticSpec synthetic;         // image_size / channels shared with folders
  double train_fraction = 20.0 / 30.0;
  double val_fraction = 5.0 / 30.0;
  std::uint64_t split_seed = 1;
};

struct OutputConfig {
  std::filesystem::path root;  // empty: $TRIDENT_OUT_ROOT, else ./runs
  std::size_t checkpoint_every = 25;
  std::size_t validate_every = 25;
  std::size_t validation_tasks = 50;
};

struct EvalConfig {
  std::size_t tasks = 600;
  std::string split = "test";  // test | val
  std::uint64_t seed = 2024;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig training;
  OutputConfig output;
  EvalConfig eval;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Parse an INI file. Every key is optional; unknown sections or keys are
/// rejected.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::string& source = "<string>");

/// Fully resolved INI text (every key, including defaults).
std::string format_run_config(const RunConfig& config);

/// Hash of the snapshot text; stored in checkpoints.
std::uint64_t config_hash(const RunConfig& config);

std::unique_ptr<Dataset> make_dataset(const RunConfig& config);
ClassSplit make_split(const RunConfig& config, const Dataset& dataset);

std::string version_string();

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit code and writes human-readable
// progress to `out`. Exit codes: 0 success, 1 usage/config error, 2 numerical
// failure.

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> tasks;
  std::optional<std::size_t> steps;
  std::optional<std::filesystem::path> out;
  bool deterministic = false;
  bool quiet = false;
};

/// Output root: explicit option, then config, then $TRIDENT_OUT_ROOT, then ./runs.
std::filesystem::path output_root(const RunConfig& config);

struct TrainResult {
  std::filesystem::path run_dir;
  LoopSummary summary;
};
TrainResult run_train(RunConfig config, const CommandOptions& options, std::ostream& out);

struct EvalRun {
  MetricsReport report;
  std::filesystem::path out_dir;
};
EvalRun run_eval(RunConfig config, const std::filesystem::path& checkpoint, const CommandOptions& options,
                 std::ostream& out);

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"attfex_on_off", "latent_dims", "mix_dims", "B_n"};
  return axes;
}

struct AblationRow {
  std::string setting;
  MetricsReport report;
  double best_val_accuracy = 0.0;
};
std::vector<AblationRow> run_ablate(RunConfig config, const std::string& axis, const CommandOptions& options,
                                    std::ostream& out);

/// Writes support/query PNGs plus manifest.json; returns the directory.
std::filesystem::path run_sample_task(const RunConfig& config, const CommandOptions& options, std::ostream& out);

/// Wraps a command: maps ConfigError/CheckpointError/invalid input to 1 and
/// NumericalError to 2, printing the message to `err`.
int guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace trident
