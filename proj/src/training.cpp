#include "trident/training.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace trident {

MetricLog::MetricLog(const std::filesystem::path& path, bool deterministic)
    : path_(path), out_(path, std::ios::trunc), deterministic_(deterministic) {
  if (!out_) throw std::runtime_error("cannot open metric log '" + path.string() + "'");
}

void MetricLog::write(nlohmann::json record) {
  if (!deterministic_) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    record["timestamp"] = std::chrono::duration<double>(now).count();
  }
  out_ << record.dump() << '\n';
  out_.flush();
}

namespace {

// NaN is not representable in JSON; emit null instead
nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"accuracy", number(r.accuracy_mean)},
          {"ci95", number(r.ci95)},
          {"ece", number(r.ece)},
          {"mce", number(r.mce)},
          {"brier", number(r.brier)},
          {"dbi_label_pre", number(r.dbi_label_pre)},
          {"dbi_label_post", number(r.dbi_label_post)},
          {"dbi_semantic_pre", number(r.dbi_semantic_pre)},
          {"dbi_semantic_post", number(r.dbi_semantic_post)},
          {"n_tasks", r.n_tasks}};
}

LoopSeeds LoopSeeds::from(std::uint64_t seed) {
  return {derive_seed(seed, 11), derive_seed(seed, 12), derive_seed(seed, 13), derive_seed(seed, 14)};
}

LoopSummary train_loop(ModelParams& params, const ModelConfig& model, const TrainConfig& train, const Dataset& dataset,
                       const ClassSplit& split, const LoopOptions& options) {
  train.validate();
  model.episode.validate();
  if (options.validate_every == 0 || options.checkpoint_every == 0) {
    throw std::invalid_argument("train_loop: validation and checkpoint cadences must be >= 1");
  }
  const auto ckpt_dir = options.run_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);

  LoopSummary summary;
  summary.log_path = options.run_dir / "metrics.jsonl";
  summary.best_checkpoint = ckpt_dir / "best.ckpt";
  summary.last_checkpoint = ckpt_dir / "last.ckpt";
  MetricLog log(summary.log_path, options.deterministic);
  auto emit = [&](nlohmann::json rec) {
    if (options.on_record) options.on_record(rec);
    log.write(std::move(rec));
  };

  const LoopSeeds seeds = LoopSeeds::from(train.seed);
  const auto val_tasks = sample_tasks(dataset, split.val, model.episode, options.validation_tasks, seeds.validation_tasks);
  Rng task_rng(seeds.tasks);
  Adam adam(train.meta_lr, train.adam_beta1, train.adam_beta2, train.adam_eps);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t consecutive_skips = 0;

  for (std::size_t step = 1; step <= train.meta_steps; ++step) {
    std::vector<Task> batch;
    for (std::size_t b = 0; b < train.meta_batch; ++b) batch.push_back(sample_task(dataset, split.train, model.episode, task_rng));
    const auto r = meta_step(params, model, batch, train, adam, derive_seed(seeds.noise, step));
    summary.steps = step;
    nlohmann::json rec{{"split", "train"},
                       {"step", step},
                       {"meta_loss", number(r.meta_loss / double(batch.size()))},
                       {"support_loss", number(r.support_loss_before)},
                       {"query_accuracy", number(100.0 * r.query_accuracy)},
                       {"grad_norm", number(r.grad_norm)},
                       {"skipped", r.skipped}};
    if (r.skipped) {
      rec["skip_reason"] = r.skip_reason;
      ++summary.skipped;
      if (++consecutive_skips >= options.max_skipped) {
        emit(rec);
        throw NumericalError("training diverged: " + std::to_string(consecutive_skips) +
                             " consecutive meta-steps with non-finite values (last: " + r.skip_reason + ")");
      }
    } else {
      consecutive_skips = 0;
    }
    if (!options.deterministic) rec["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit(std::move(rec));

    if (step % options.validate_every == 0 || step == train.meta_steps) {
      const auto ev = evaluate(params, model, val_tasks, train, seeds.validation_noise);
      summary.last_val_accuracy = ev.report.accuracy_mean;
      nlohmann::json vrec = report_to_json(ev.report);
      vrec["split"] = "val";
      vrec["step"] = step;
      const bool best = ev.report.accuracy_mean > summary.best_val_accuracy;
      vrec["best"] = best;
      if (!options.deterministic) vrec["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (best) {
        summary.best_val_accuracy = ev.report.accuracy_mean;
        summary.best_step = step;
        save_checkpoint(summary.best_checkpoint, params, model.episode, options.config_hash);
      }
      emit(std::move(vrec));
    }
    if (step % options.checkpoint_every == 0 || step == train.meta_steps) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
      save_checkpoint(ckpt_dir / name.str(), params, model.episode, options.config_hash);
      save_checkpoint(summary.last_checkpoint, params, model.episode, options.config_hash);
    }
  }
  return summary;
}

}  // namespace trident
