#include <malloc.h>

#include <iostream>

#include <CLI11.hpp>

#include "trident/cli.hpp"

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t tasks = 0;
  std::size_t steps = 0;
  std::string out;
  bool deterministic = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_tasks, bool with_steps) {
  cmd->add_option("--config", c.config, "INI config file (defaults are used for omitted keys)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the seed");
  if (with_tasks) cmd->add_option("--tasks", c.tasks, "number of evaluation tasks");
  if (with_steps) cmd->add_option("--steps", c.steps, "override training.meta_steps");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--deterministic", c.deterministic, "omit wall-clock fields so logs are byte-identical across runs");
  cmd->add_flag("-q,--quiet", c.quiet, "suppress progress output");
}

trident::CommandOptions options(const CLI::App* cmd, const Common& c) {
  trident::CommandOptions o;
  if (cmd->count("--seed")) o.seed = c.seed;
  if (cmd->get_option_no_throw("--tasks") && cmd->count("--tasks")) o.tasks = c.tasks;
  if (cmd->get_option_no_throw("--steps") && cmd->count("--steps")) o.steps = c.steps;
  if (!c.out.empty()) o.out = c.out;
  o.deterministic = c.deterministic;
  o.quiet = c.quiet;
  return o;
}

trident::RunConfig config_of(const Common& c) {
  return c.config.empty() ? trident::RunConfig{} : trident::load_run_config(c.config);
}

}  // namespace

int main(int argc, char** argv) {
  // the autodiff tape allocates and frees large buffers every step
  mallopt(M_MMAP_THRESHOLD, 1 << 25);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"TRIDENT few-shot classifier"};
  app.set_version_flag("--version", trident::version_string());
  app.require_subcommand(1);

  Common train_c, eval_c, ablate_c, sample_c;
  std::string checkpoint, axis;

  auto* train = app.add_subcommand("train", "meta-train a model");
  add_common(train, train_c, false, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out tasks");
  add_common(eval, eval_c, true, false);
  eval->add_option("checkpoint,--checkpoint", checkpoint, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate a grid along one axis");
  add_common(ablate, ablate_c, true, true);
  std::string axes_help = "one of:";
  for (const auto& a : trident::ablation_axes()) axes_help += " " + a;
  ablate->add_option("axis,--axis", axis, axes_help)->required();

  auto* sample = app.add_subcommand("sample-task", "render one episode as images plus a manifest");
  add_common(sample, sample_c, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? trident::kExitOk : trident::kExitUsage;
  }

  return trident::guarded(
      [&] {
        if (train->parsed()) {
          trident::run_train(config_of(train_c), options(train, train_c), std::cout);
        } else if (eval->parsed()) {
          trident::run_eval(config_of(eval_c), checkpoint, options(eval, eval_c), std::cout);
        } else if (ablate->parsed()) {
          trident::run_ablate(config_of(ablate_c), axis, options(ablate, ablate_c), std::cout);
        } else {
          trident::run_sample_task(config_of(sample_c), options(sample, sample_c), std::cout);
        }
      },
      std::cerr);
}
