#pragma once

// Meta-training driver: repeated meta-steps, periodic validation,
// checkpointing and a line-delimited JSON metric log.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "trident/checkpoint.hpp"
#include "trident/episodic.hpp"
#include "trident/metatrain.hpp"

namespace trident {

/// One JSON object per line. Deterministic logs carry no timestamps.
class MetricLog {
 public:
  MetricLog(const std::filesystem::path& path, bool deterministic);
  void write(nlohmann::json record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  bool deterministic_;
};

nlohmann::json report_to_json(const MetricsReport& r);

struct LoopOptions {
  std::filesystem::path run_dir;
  std::size_t validate_every = 25;
  std::size_t validation_tasks = 50;
  std::size_t checkpoint_every = 25;
  bool deterministic = true;
  std::uint64_t config_hash = 0;
  /// Consecutive skipped meta-steps tolerated before giving up.
  std::size_t max_skipped = 10;
  /// Optional progress hook, called with every log record.
  std::function<void(const nlohmann::json&)> on_record;
};

struct LoopSummary {
  std::size_t steps = 0;
  std::size_t skipped = 0;
  double best_val_accuracy = -1.0;  // percent
  std::size_t best_step = 0;
  double last_val_accuracy = -1.0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
};

/// Runs train.meta_steps meta-steps on tasks from split.train, validating on a
/// fixed set of split.val tasks. Writes metrics.jsonl, checkpoints/last.ckpt,
/// checkpoints/best.ckpt and step-numbered snapshots under run_dir.
/// Throws NumericalError after max_skipped consecutive non-finite steps.
LoopSummary train_loop(ModelParams& params, const ModelConfig& model, const TrainConfig& train, const Dataset& dataset,
                       const ClassSplit& split, const LoopOptions& options);

/// Seeds of the loop's independent random streams.
struct LoopSeeds {
  std::uint64_t tasks, noise, validation_tasks, validation_noise;
  static LoopSeeds from(std::uint64_t seed);
};

}  // namespace trident
