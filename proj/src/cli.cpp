#include "trident/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "trident/checkpoint.hpp"
#include "trident/metrics.hpp"

#ifndef TRIDENT_VERSION
#define TRIDENT_VERSION "unknown"
#endif

namespace trident {

namespace fs = std::filesystem;

std::string version_string() { return "trident " TRIDENT_VERSION; }

// ---------------------------------------------------------------------------
// Field table

namespace {

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& text, const std::string& at) {
  double v = 0.0;
  const char* b = text.data();
  auto [end, ec] = std::from_chars(b, b + text.size(), v);
  if (ec != std::errc() || end != b + text.size() || !std::isfinite(v)) {
    throw ConfigError(at + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& at) {
  std::uint64_t v = 0;
  const char* b = text.data();
  auto [end, ec] = std::from_chars(b, b + text.size(), v);
  if (ec != std::errc() || end != b + text.size()) throw ConfigError(at + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& at) {
  if (text == "on" || text == "true" || text == "yes" || text == "1") return true;
  if (text == "off" || text == "false" || text == "no" || text == "0") return false;
  throw ConfigError(at + ": expected on/off, got '" + text + "'");
}

struct Field {
  std::string section, key;
  std::function<void(const std::string&, const std::string&)> set;  // (value, location)
  std::function<std::string()> get;
};

std::vector<Field> field_table(RunConfig& c) {
  std::vector<Field> f;
  auto size_field = [&f](std::string s, std::string k, std::size_t& ref) {
    f.push_back({s, k, [&ref](const std::string& v, const std::string& at) { ref = parse_u64(v, at); },
                 [&ref] { return std::to_string(ref); }});
  };
  auto u64_field = [&f](std::string s, std::string k, std::uint64_t& ref) {
    f.push_back({s, k, [&ref](const std::string& v, const std::string& at) { ref = parse_u64(v, at); },
                 [&ref] { return std::to_string(ref); }});
  };
  auto double_field = [&f](std::string s, std::string k, double& ref) {
    f.push_back({s, k, [&ref](const std::string& v, const std::string& at) { ref = parse_double(v, at); },
                 [&ref] { return fmt_double(ref); }});
  };
  auto& d = c.dataset;
  f.push_back({"dataset", "kind", [&d](const std::string& v, const std::string&) { d.kind = v; }, [&d] { return d.kind; }});
  f.push_back({"dataset", "root", [&d](const std::string& v, const std::string&) { d.root = v; }, [&d] { return d.root.string(); }});
  size_field("dataset", "image_size", d.synthetic.image_size);
  size_field("dataset", "channels", d.synthetic.channels);
  size_field("dataset", "num_classes", d.synthetic.num_classes);
  size_field("dataset", "images_per_class", d.synthetic.images_per_class);
  u64_field("dataset", "seed", d.synthetic.seed);
  double_field("dataset", "position_jitter", d.synthetic.position_jitter);
  double_field("dataset", "scale_jitter", d.synthetic.scale_jitter);
  double_field("dataset", "texture_amplitude", d.synthetic.texture_amplitude);
  double_field("dataset", "train_fraction", d.train_fraction);
  double_field("dataset", "val_fraction", d.val_fraction);
  u64_field("dataset", "split_seed", d.split_seed);

  auto& e = c.model.episode;
  size_field("episode", "n_ways", e.n_ways);
  size_field("episode", "k_shots", e.k_shots);
  size_field("episode", "q_queries", e.q_queries);

  auto& m = c.model;
  size_field("model", "latent_label", m.latent_label);
  size_field("model", "latent_semantic", m.latent_semantic);
  size_field("model", "classifier_hidden", m.classifier_hidden);
  size_field("model", "mix_m", m.mix_m);
  size_field("model", "mix_n", m.mix_n);
  f.push_back({"model", "attention",
               [&m](const std::string& v, const std::string& at) {
                 try {
                   m.attention = parse_attention_mode(v);
                 } catch (const std::invalid_argument& ex) {
                   throw ConfigError(at + ": " + ex.what());
                 }
               },
               [&m] { return to_string(m.attention); }});
  f.push_back({"model", "attfex", [&m](const std::string& v, const std::string& at) { m.attfex_enabled = parse_bool(v, at); },
               [&m] { return std::string(m.attfex_enabled ? "on" : "off"); }});
  f.push_back({"model", "qkv_relu",
               [&m](const std::string& v, const std::string& at) {
                 if (v == "auto") m.qkv_relu.reset();
                 else m.qkv_relu = parse_bool(v, at);
               },
               [&m] { return std::string(!m.qkv_relu ? "auto" : (*m.qkv_relu ? "on" : "off")); }});

  auto& t = c.training;
  double_field("training", "alpha1", t.alpha1);
  double_field("training", "alpha2", t.alpha2);
  double_field("training", "inner_lr", t.inner_lr);
  double_field("training", "meta_lr", t.meta_lr);
  size_field("training", "meta_batch", t.meta_batch);
  size_field("training", "inner_steps", t.inner_steps);
  double_field("training", "clip_norm", t.clip_norm);
  double_field("training", "adam_beta1", t.adam_beta1);
  double_field("training", "adam_beta2", t.adam_beta2);
  double_field("training", "adam_eps", t.adam_eps);
  size_field("training", "meta_steps", t.meta_steps);
  u64_field("training", "seed", t.seed);

  auto& o = c.output;
  f.push_back({"output", "root", [&o](const std::string& v, const std::string&) { o.root = v; }, [&o] { return o.root.string(); }});
  size_field("output", "checkpoint_every", o.checkpoint_every);
  size_field("output", "validate_every", o.validate_every);
  size_field("output", "validation_tasks", o.validation_tasks);

  auto& ev = c.eval;
  size_field("eval", "tasks", ev.tasks);
  f.push_back({"eval", "split", [&ev](const std::string& v, const std::string&) { ev.split = v; }, [&ev] { return ev.split; }});
  u64_field("eval", "seed", ev.seed);
  return f;
}

// the episode's image geometry follows the dataset section
void sync(RunConfig& c) {
  c.model.episode.image_size = c.dataset.synthetic.image_size;
  c.model.episode.channels = c.dataset.synthetic.channels;
}

}  // namespace

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& at, const std::string& what) {
    if (!ok) throw ConfigError(at + ": " + what);
  };
  require(dataset.kind == "synthetic" || dataset.kind == "folder", where("dataset", "kind"),
          "expected 'synthetic' or 'folder', got '" + dataset.kind + "'");
  require(dataset.kind != "folder" || !dataset.root.empty(), where("dataset", "root"), "required when kind = folder");
  require(dataset.train_fraction > 0.0 && dataset.val_fraction > 0.0 && dataset.train_fraction + dataset.val_fraction < 1.0,
          where("dataset", "train_fraction"), "train and val fractions must be positive and leave room for a test split");
  require(dataset.synthetic.channels == 1 || dataset.synthetic.channels == 3, where("dataset", "channels"), "must be 1 or 3");
  require(dataset.synthetic.image_size >= 16, where("dataset", "image_size"), "must be at least 16 for four 2x2 poolings");
  if (dataset.kind == "synthetic") {
    require(dataset.synthetic.num_classes >= 3 && dataset.synthetic.num_classes <= synthetic_shape_count(),
            where("dataset", "num_classes"), "must be between 3 and " + std::to_string(synthetic_shape_count()));
    require(dataset.synthetic.images_per_class >= model.episode.k_shots + model.episode.q_queries,
            where("dataset", "images_per_class"), "must be at least k_shots + q_queries");
  }
  try {
    model.episode.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[episode] ") + e.what());
  }
  for (auto [key, v] : {std::pair{"latent_label", model.latent_label}, {"latent_semantic", model.latent_semantic},
                        {"classifier_hidden", model.classifier_hidden}, {"mix_m", model.mix_m}, {"mix_n", model.mix_n}}) {
    require(v >= 1, where("model", key), "must be >= 1");
  }
  try {
    training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[training] ") + e.what());
  }
  require(training.adam_beta1 >= 0.0 && training.adam_beta1 < 1.0, where("training", "adam_beta1"), "must be in [0, 1)");
  require(training.adam_beta2 >= 0.0 && training.adam_beta2 < 1.0, where("training", "adam_beta2"), "must be in [0, 1)");
  require(training.adam_eps > 0.0, where("training", "adam_eps"), "must be > 0");
  require(output.checkpoint_every >= 1, where("output", "checkpoint_every"), "must be >= 1");
  require(output.validate_every >= 1, where("output", "validate_every"), "must be >= 1");
  require(output.validation_tasks >= 2, where("output", "validation_tasks"), "must be >= 2 for a confidence interval");
  require(eval.tasks >= 2, where("eval", "tasks"), "must be >= 2 for a confidence interval");
  require(eval.split == "test" || eval.split == "val", where("eval", "split"), "expected 'test' or 'val', got '" + eval.split + "'");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  auto fields = field_table(c);
  std::map<std::string, std::vector<std::string>> known;
  for (const auto& f : fields) known[f.section].push_back(f.key);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(source + ": key '" + section + "' must sit inside a section");
    auto sec = known.find(section);
    if (sec == known.end()) {
      std::string valid;
      for (const auto& [name, keys] : known) valid += (valid.empty() ? "" : ", ") + name;
      throw ConfigError(source + ": unknown section [" + section + "] (valid sections: " + valid + ")");
    }
    for (const auto& [key, value] : body) {
      auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields.end()) {
        std::string valid;
        for (const auto& k : sec->second) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError(source + ": unknown key " + where(section, key) + " (valid keys: " + valid + ")");
      }
      it->set(value.data(), source + ": " + where(section, key));
    }
  }
  sync(c);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_run_config(s.str(), path.string());
}

std::string format_run_config(const RunConfig& config) {
  RunConfig c = config;
  std::ostringstream out;
  std::string section;
  for (const auto& f : field_table(c)) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    out << f.key << " = " << f.get() << "\n";
  }
  return out.str();
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a64(format_run_config(config)); }

std::unique_ptr<Dataset> make_dataset(const RunConfig& config) {
  if (config.dataset.kind == "folder") {
    return std::make_unique<ImageFolderDataset>(config.dataset.root, config.dataset.synthetic.image_size,
                                                config.dataset.synthetic.channels);
  }
  return std::make_unique<SyntheticDataset>(config.dataset.synthetic);
}

ClassSplit make_split(const RunConfig& config, const Dataset& dataset) {
  return split_classes(dataset.num_classes(), config.dataset.train_fraction, config.dataset.val_fraction,
                       config.dataset.split_seed);
}

fs::path output_root(const RunConfig& config) {
  if (!config.output.root.empty()) return config.output.root;
  if (const char* env = std::getenv("TRIDENT_OUT_ROOT"); env && *env) return env;
  return "runs";
}

int guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "filesystem error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::string hex8(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << (h & 0xffffffffull);
  return s.str();
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path probe = dir / ".write_probe";
  std::ofstream test(probe);
  if (ec || !test) throw ConfigError("output directory '" + dir.string() + "' is not writable");
  test.close();
  fs::remove(probe);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

void apply(RunConfig& c, const CommandOptions& o) {
  if (o.seed) c.training.seed = *o.seed;
  if (o.steps) c.training.meta_steps = *o.steps;
  sync(c);
  c.validate();
}

const std::vector<std::size_t>& split_pool(const ClassSplit& s, const std::string& name) {
  return name == "val" ? s.val : s.test;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void print_report(const MetricsReport& r, std::ostream& out) {
  out << "accuracy  " << pct(r.accuracy_mean) << " +- " << pct(r.ci95) << " %  (" << r.n_tasks << " tasks)\n"
      << "ECE       " << num(r.ece) << "\n"
      << "MCE       " << num(r.mce) << "\n"
      << "Brier     " << num(r.brier) << "\n"
      << "DBI(z_l)  " << num(r.dbi_label_pre) << " -> " << num(r.dbi_label_post) << "  (pre -> post adaptation)\n"
      << "DBI(z_s)  " << num(r.dbi_semantic_pre) << " -> " << num(r.dbi_semantic_post) << "\n";
}

void check_compatible(const CheckpointHeader& h, const EpisodeSpec& e, const fs::path& path) {
  const EpisodeSpec& c = h.episode;
  if (c.n_ways == e.n_ways && c.k_shots == e.k_shots && c.q_queries == e.q_queries && c.image_size == e.image_size &&
      c.channels == e.channels) {
    return;
  }
  std::ostringstream msg;
  msg << "checkpoint '" << path.string() << "' was trained for (N, K, Q) = (" << c.n_ways << ", " << c.k_shots << ", "
      << c.q_queries << ") at " << c.channels << "x" << c.image_size << "x" << c.image_size << ", but the config asks for ("
      << e.n_ways << ", " << e.k_shots << ", " << e.q_queries << ") at " << e.channels << "x" << e.image_size << "x"
      << e.image_size << ". The AttFEX mixing layer is sized for T = N(K+Q) = " << c.episode_size()
      << " images per episode, so the model must be retrained for a different episode shape";
  throw CheckpointError(msg.str());
}

}  // namespace

TrainResult run_train(RunConfig config, const CommandOptions& options, std::ostream& out) {
  apply(config, options);
  const std::uint64_t hash = config_hash(config);
  const fs::path run_dir =
      options.out ? *options.out : output_root(config) / ("train-seed" + std::to_string(config.training.seed) + "-" + hex8(hash));
  prepare_dir(run_dir);
  const auto dataset = make_dataset(config);
  const auto split = make_split(config, *dataset);

  Rng init_rng(config.training.seed);
  ModelParams params = init_model(config.model, init_rng);
  write_text(run_dir / "config.ini", format_run_config(config));
  const nlohmann::json info{{"version", version_string()},
                            {"command", "train"},
                            {"seed", config.training.seed},
                            {"parameter_count", parameter_count(params)},
                            {"config_hash", hex8(hash >> 32) + hex8(hash)},
                            {"deterministic", options.deterministic}};
  write_text(run_dir / "run.json", info.dump(2) + "\n");
  if (!options.quiet) {
    out << version_string() << "\nrun directory " << run_dir.string() << "\nparameters " << parameter_count(params)
        << ", seed " << config.training.seed << ", meta-steps " << config.training.meta_steps << "\n";
  }

  LoopOptions loop;
  loop.run_dir = run_dir;
  loop.validate_every = config.output.validate_every;
  loop.checkpoint_every = config.output.checkpoint_every;
  loop.validation_tasks = config.output.validation_tasks;
  loop.deterministic = options.deterministic;
  loop.config_hash = hash;
  if (!options.quiet) {
    loop.on_record = [&out](const nlohmann::json& r) {
      if (r["split"] == "val") {
        out << "step " << r["step"] << "  validation accuracy " << (r["accuracy"].is_null() ? std::string("nan") : pct(r["accuracy"].get<double>()))
            << (r["best"].get<bool>() ? "  (best)" : "") << std::endl;
      } else if (r["skipped"].get<bool>()) {
        out << "step " << r["step"] << "  skipped: " << r["skip_reason"].get<std::string>() << std::endl;
      } else {
        out << "step " << r["step"] << "  meta-loss " << num(r["meta_loss"].get<double>(), 3) << "  query acc "
            << pct(r["query_accuracy"].get<double>()) << std::endl;
      }
    };
  }
  TrainResult result{run_dir, train_loop(params, config.model, config.training, *dataset, split, loop)};
  if (!options.quiet) {
    out << "best validation accuracy " << pct(result.summary.best_val_accuracy) << " % at step " << result.summary.best_step
        << "\ncheckpoints in " << (run_dir / "checkpoints").string() << "\n";
  }
  return result;
}

EvalRun run_eval(RunConfig config, const fs::path& checkpoint, const CommandOptions& options, std::ostream& out) {
  apply(config, options);
  const auto header = read_checkpoint_header(checkpoint);
  check_compatible(header, config.model.episode, checkpoint);
  Rng init_rng(0);
  ModelParams params = init_model(config.model, init_rng);
  load_checkpoint(checkpoint, params);
  if (header.config_hash != config_hash(config) && !options.quiet) {
    out << "note: checkpoint was written under a different config snapshot\n";
  }

  const auto dataset = make_dataset(config);
  const auto split = make_split(config, *dataset);
  const std::size_t n_tasks = options.tasks.value_or(config.eval.tasks);
  if (n_tasks < 2) throw ConfigError("--tasks: need at least 2 tasks for a confidence interval");
  const std::uint64_t seed = options.seed.value_or(config.eval.seed);
  const auto tasks = sample_tasks(*dataset, split_pool(split, config.eval.split), config.model.episode, n_tasks, seed);
  const auto ev = evaluate(params, config.model, tasks, config.training, derive_seed(seed, 1));

  EvalRun run{ev.report, options.out ? *options.out
                                     : output_root(config) / ("eval-" + config.eval.split + "-seed" + std::to_string(seed))};
  prepare_dir(run.out_dir);
  {
    MetricLog log(run.out_dir / "eval.jsonl", options.deterministic);
    nlohmann::json rec = report_to_json(ev.report);
    rec["split"] = config.eval.split;
    rec["checkpoint"] = checkpoint.string();
    log.write(rec);
    for (std::size_t i = 0; i < ev.tasks.size(); ++i) {
      const auto& t = ev.tasks[i];
      log.write({{"split", config.eval.split},
                 {"task", i},
                 {"accuracy", 100.0 * t.accuracy},
                 {"dbi_label_pre", t.dbi_label_pre},
                 {"dbi_label_post", t.dbi_label_post},
                 {"dbi_semantic_pre", t.dbi_semantic_pre},
                 {"dbi_semantic_post", t.dbi_semantic_post}});
    }
  }
  std::vector<double> conf;
  std::vector<std::uint8_t> ok;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto s = summarize_predictions(ev.probs[i], tasks[i].query_y);
    conf.insert(conf.end(), s.confidence.begin(), s.confidence.end());
    ok.insert(ok.end(), s.correct.begin(), s.correct.end());
  }
  write_reliability_csv(run.out_dir / "reliability.csv", reliability_bins(conf, ok));
  // 2-D projections of the first task's query latents after adaptation
  const auto first = predict_task(params, config.model, {tasks[0].support_x, tasks[0].query_x}, tasks[0].support_y,
                                  config.training, derive_seed(derive_seed(seed, 1), 0));
  write_projection_csv(run.out_dir / "projection_label.csv", project2d(first.mu_l_post), tasks[0].query_y);
  write_projection_csv(run.out_dir / "projection_semantic.csv", project2d(first.mu_s_post), tasks[0].query_y);

  if (!options.quiet) {
    out << version_string() << "\ncheckpoint " << checkpoint.string() << "  split " << config.eval.split << "\n";
    print_report(ev.report, out);
    out << "outputs in " << run.out_dir.string() << "\n";
  }
  return run;
}

std::vector<AblationRow> run_ablate(RunConfig config, const std::string& axis, const CommandOptions& options,
                                    std::ostream& out) {
  const auto& axes = ablation_axes();
  if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
    std::string valid;
    for (const auto& a : axes) valid += (valid.empty() ? "" : ", ") + a;
    throw ConfigError("unknown ablation axis '" + axis + "' (valid axes: " + valid + ")");
  }
  apply(config, options);
  struct Setting {
    std::string name;
    std::function<void(RunConfig&)> edit;
  };
  std::vector<Setting> grid;
  if (axis == "attfex_on_off") {
    grid = {{"AttFEX on", [](RunConfig& c) { c.model.attfex_enabled = true; }},
            {"AttFEX off", [](RunConfig& c) { c.model.attfex_enabled = false; }}};
  } else if (axis == "latent_dims") {
    for (std::size_t d : {32u, 64u, 128u})
      grid.push_back({"(" + std::to_string(d) + ", " + std::to_string(d) + ")", [d](RunConfig& c) {
                        c.model.latent_label = d;
                        c.model.latent_semantic = d;
                      }});
  } else if (axis == "mix_dims") {
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 32}, {128, 64}})
      grid.push_back({"(" + std::to_string(m) + ", " + std::to_string(n) + ")", [m, n](RunConfig& c) {
                        c.model.mix_m = m;
                        c.model.mix_n = n;
                      }});
  } else {
    for (auto [b, n] : {std::pair<std::size_t, std::size_t>{2, 3}, {2, 5}, {4, 3}, {4, 5}})
      grid.push_back({"(" + std::to_string(b) + ", " + std::to_string(n) + ")", [b, n](RunConfig& c) {
                        c.training.meta_batch = b;
                        c.training.inner_steps = n;
                      }});
  }

  const fs::path root = options.out ? *options.out : output_root(config) / ("ablate-" + axis);
  prepare_dir(root);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    RunConfig c = config;
    grid[i].edit(c);
    c.validate();
    CommandOptions sub = options;
    sub.out = root / ("setting_" + std::to_string(i));
    sub.quiet = true;
    sub.seed.reset();
    sub.steps.reset();
    if (!options.quiet) out << "[" << axis << "] " << grid[i].name << ": training " << c.training.meta_steps << " meta-steps" << std::endl;
    const auto trained = run_train(c, sub, out);
    CommandOptions ev_opts = sub;
    ev_opts.out = *sub.out / "eval";
    ev_opts.tasks = options.tasks;
    const auto ev = run_eval(c, trained.summary.best_checkpoint, ev_opts, out);
    rows.push_back({grid[i].name, ev.report, trained.summary.best_val_accuracy});
    if (!options.quiet) out << "  test accuracy " << pct(ev.report.accuracy_mean) << " +- " << pct(ev.report.ci95) << std::endl;
  }

  std::ostringstream table;
  table << "| " << axis << " | accuracy (%) | ci95 | ECE | best val (%) |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    table << "| " << r.setting << " | " << pct(r.report.accuracy_mean) << " | " << pct(r.report.ci95) << " | "
          << num(r.report.ece) << " | " << pct(r.best_val_accuracy) << " |\n";
  }
  write_text(root / "ablation.md", table.str());
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    auto rec = report_to_json(r.report);
    rec["setting"] = r.setting;
    rec["best_val_accuracy"] = r.best_val_accuracy;
    j.push_back(rec);
  }
  write_text(root / "ablation.json", j.dump(2) + "\n");
  if (!options.quiet) out << "\n" << table.str();
  return rows;
}

fs::path run_sample_task(const RunConfig& config_in, const CommandOptions& options, std::ostream& out) {
  RunConfig config = config_in;
  apply(config, options);
  const auto dataset = make_dataset(config);
  const auto split = make_split(config, *dataset);
  const std::uint64_t seed = options.seed.value_or(config.training.seed);
  Rng rng(seed);
  const Task task = sample_task(*dataset, split.train, config.model.episode, rng);
  const fs::path dir = options.out ? *options.out : output_root(config) / ("task-seed" + std::to_string(seed));
  prepare_dir(dir);

  auto one_image = [](const NdArray& batch, std::size_t row) {
    const std::size_t per = batch.size() / batch.dim(0);
    NdArray img({batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy_n(batch.raw() + row * per, per, img.raw());
    return img;
  };
  nlohmann::json manifest{{"seed", seed},
                          {"n_ways", config.model.episode.n_ways},
                          {"k_shots", config.model.episode.k_shots},
                          {"q_queries", config.model.episode.q_queries}};
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t l = 0; l < task.classes.size(); ++l) {
    classes.push_back({{"label", l}, {"class_id", task.classes[l]}, {"class_name", dataset->class_name(task.classes[l])}});
  }
  manifest["classes"] = classes;
  auto dump = [&](const char* kind, const NdArray& x, const std::vector<std::size_t>& y, const std::vector<ImageRef>& refs) {
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < y.size(); ++i) {
      std::ostringstream name;
      name << kind << "_" << std::setw(3) << std::setfill('0') << i << "_label" << y[i] << ".png";
      write_image(dir / name.str(), one_image(x, i));
      list.push_back({{"file", name.str()}, {"label", y[i]}, {"class_id", refs[i].class_id}, {"index", refs[i].index}});
    }
    manifest[kind] = list;
  };
  dump("support", task.support_x, task.support_y, task.support_refs);
  dump("query", task.query_x, task.query_y, task.query_refs);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  if (!options.quiet) {
    out << "wrote " << task.support_y.size() + task.query_y.size() << " images and manifest.json to " << dir.string() << "\n";
  }
  return dir;
}

}  // namespace trident
