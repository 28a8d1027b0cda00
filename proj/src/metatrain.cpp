#include "trident/metatrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trident {

// ---------------------------------------------------------------------------
// Configuration and parameter containers

AttFEXConfig ModelConfig::attfex_config() const {
  AttFEXConfig c;
  c.episode_size = episode.episode_size();
  c.mix_m = mix_m;
  c.mix_n = mix_n;
  c.mode = attention;
  c.qkv_relu = qkv_relu.value_or(episode.k_shots > 1);
  return c;
}

DecoderGeometry ModelConfig::decoder_geometry() const { return DecoderGeometry::for_image(episode.channels, episode.image_size); }

std::size_t ModelConfig::feature_size() const {
  const std::size_t s = encoder_output_extent(episode.image_size);
  return kEncoderWidth * s * s;
}

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.episode.validate();
  ModelParams p;
  const std::size_t feat = config.feature_size();
  p.enc_semantic = init_conv_encoder(config.episode.channels, rng);
  p.head_semantic = init_gaussian_head(feat, config.latent_semantic, rng);
  p.enc_label = init_conv_encoder(config.episode.channels, rng);
  if (config.attfex_enabled) p.attfex = init_attfex(config.attfex_config(), rng);
  p.head_label = init_gaussian_head(feat + config.latent_semantic, config.latent_label, rng);
  p.classifier = init_classifier(config.latent_label, config.classifier_hidden, config.episode.n_ways, rng);
  p.decoder = init_decoder(config.latent_label + config.latent_semantic, config.decoder_geometry(), rng);
  return p;
}

namespace {

void add_encoder(std::vector<ParamSlot>& out, const std::string& prefix, ConvEncParams& enc) {
  for (std::size_t i = 0; i < kEncoderBlocks; ++i) {
    const std::string b = prefix + ".block" + std::to_string(i);
    auto& blk = enc.blocks[i];
    out.push_back({b + ".weight", &blk.weight});
    out.push_back({b + ".bias", &blk.bias});
    out.push_back({b + ".gamma", &blk.gamma});
    out.push_back({b + ".beta", &blk.beta});
  }
}

void add_head(std::vector<ParamSlot>& out, const std::string& prefix, GaussianHeadParams& h) {
  out.push_back({prefix + ".mean.weight", &h.mean_weight});
  out.push_back({prefix + ".mean.bias", &h.mean_bias});
  out.push_back({prefix + ".logvar.weight", &h.logvar_weight});
  out.push_back({prefix + ".logvar.bias", &h.logvar_bias});
}

}  // namespace

std::vector<ParamSlot> param_slots(ModelParams& p) {
  std::vector<ParamSlot> out;
  add_encoder(out, "phi2.encoder", p.enc_semantic);
  add_head(out, "phi2.head", p.head_semantic);
  add_encoder(out, "phi1.encoder", p.enc_label);
  if (p.attfex.w_m.defined()) {
    out.push_back({"phi1.attfex.w_m", &p.attfex.w_m});
    out.push_back({"phi1.attfex.w_n", &p.attfex.w_n});
    out.push_back({"phi1.attfex.w_q", &p.attfex.w_q});
    out.push_back({"phi1.attfex.w_k", &p.attfex.w_k});
    out.push_back({"phi1.attfex.w_v", &p.attfex.w_v});
  }
  add_head(out, "phi1.head", p.head_label);
  out.push_back({"theta1.hidden.weight", &p.classifier.hidden_weight});
  out.push_back({"theta1.hidden.bias", &p.classifier.hidden_bias});
  out.push_back({"theta1.out.weight", &p.classifier.out_weight});
  out.push_back({"theta1.out.bias", &p.classifier.out_bias});
  out.push_back({"theta2.seed.weight", &p.decoder.seed_weight});
  out.push_back({"theta2.seed.bias", &p.decoder.seed_bias});
  for (std::size_t i = 0; i < kEncoderBlocks; ++i) {
    out.push_back({"theta2.block" + std::to_string(i) + ".weight", &p.decoder.conv_weight[i]});
    out.push_back({"theta2.block" + std::to_string(i) + ".bias", &p.decoder.conv_bias[i]});
  }
  return out;
}

std::vector<Var> param_list(const ModelParams& params) {
  auto& p = const_cast<ModelParams&>(params);  // slots are only read here
  std::vector<Var> out;
  for (const auto& s : param_slots(p)) out.push_back(*s.var);
  return out;
}

ModelParams with_params(const ModelParams& layout, std::span<const Var> values) {
  ModelParams out = layout;
  auto slots = param_slots(out);
  if (slots.size() != values.size()) {
    throw std::invalid_argument("with_params: " + std::to_string(values.size()) + " values for " + std::to_string(slots.size()) + " parameters");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (values[i].shape() != slots[i].var->shape()) {
      throw ShapeError("with_params: " + slots[i].name + " expects " + shape_to_string(slots[i].var->shape()) + ", got " +
                       shape_to_string(values[i].shape()));
    }
    *slots[i].var = values[i];
  }
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& v : param_list(params)) n += v.size();
  return n;
}

ModelParams clone_params(const ModelParams& params) {
  std::vector<Var> fresh;
  for (const auto& v : param_list(params)) fresh.push_back(parameter(v.value()));
  return with_params(params, fresh);
}

// ---------------------------------------------------------------------------
// Forward pass and loss

ForwardOutput trident_forward(const ModelParams& p, const ModelConfig& config, const EpisodeImages& images,
                              Reference reference, Rng* noise) {
  const EpisodeSpec& ep = config.episode;
  const Shape expect_s{ep.support_size(), ep.channels, ep.image_size, ep.image_size};
  const Shape expect_q{ep.query_size(), ep.channels, ep.image_size, ep.image_size};
  if (images.support_x.shape() != expect_s || images.query_x.shape() != expect_q) {
    throw ShapeError("trident_forward: episode " + shape_to_string(images.support_x.shape()) + " + " +
                     shape_to_string(images.query_x.shape()) + " does not match the configured (N, K, Q) = (" +
                     std::to_string(ep.n_ways) + ", " + std::to_string(ep.k_shots) + ", " + std::to_string(ep.q_queries) + ")");
  }
  const bool on_support = reference == Reference::support;
  const NdArray& x_ref = on_support ? images.support_x : images.query_x;
  const std::size_t rows = x_ref.dim(0);
  auto draw = [&](std::size_t dim) { return noise ? normal_array({rows, dim}, *noise) : NdArray({rows, dim}, 0.0); };

  ForwardOutput out;
  out.reference_x = constant(x_ref);

  // (1) semantic latent from the lower encoder on the reference set
  const Var f_s = flatten(conv_encode(p.enc_semantic, out.reference_x));
  out.latent_s = gaussian_head(p.head_semantic, f_s);
  const Var z_s = reparameterize(out.latent_s, draw(config.latent_semantic));

  // (2) task-aware features from every image of the episode
  const Var x_all = concat({constant(images.support_x), constant(images.query_x)}, 0);
  const Var features = conv_encode(p.enc_label, x_all);
  Var f_ref;
  if (config.attfex_enabled) {
    const auto att = attfex_forward(p.attfex, config.attfex_config(), features, ep.support_size());
    f_ref = on_support ? att.support : att.query;
  } else {
    f_ref = on_support ? slice0(features, 0, ep.support_size()) : slice0(features, ep.support_size(), ep.query_size());
  }

  // (3) label latent, (4) reconstruction, (5) class probabilities
  out.latent_l = gaussian_head(p.head_label, concat({flatten(f_ref), z_s}, 1));
  const Var z_l = reparameterize(out.latent_l, draw(config.latent_label));
  out.reconstruction = decode(p.decoder, config.decoder_geometry(), z_l, z_s);
  out.probs = softmax(classify(p.classifier, z_l));
  return out;
}

LossBreakdown trident_loss(const ForwardOutput& out, std::span<const std::size_t> labels, const TrainConfig& config) {
  return elbo_loss(out.reference_x, out.reconstruction, out.probs, labels, out.latent_s, out.latent_l, config.alpha1,
                   config.alpha2);
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("training: ") + name + " must be > 0");
  };
  positive(alpha1, "alpha1");
  positive(alpha2, "alpha2");
  positive(inner_lr, "inner_lr");
  positive(meta_lr, "meta_lr");
  positive(clip_norm, "clip_norm");
  if (meta_batch < 1) throw std::invalid_argument("training: meta_batch must be >= 1");
  if (inner_steps < 1) throw std::invalid_argument("training: inner_steps must be >= 1");
}

// ---------------------------------------------------------------------------
// Generic adaptation and optimizer

std::vector<Var> sgd_adapt(std::span<const Var> params, const ParamLossFn& loss, double lr, std::size_t steps,
                           bool create_graph) {
  if (steps < 1) throw std::invalid_argument("sgd_adapt: need at least one step");
  GradModeGuard on(true);
  std::vector<Var> cur(params.begin(), params.end());
  if (!create_graph) {
    for (auto& v : cur) v = parameter(v.value());
  }
  for (std::size_t step = 0; step < steps; ++step) {
    const Var l = loss(cur);
    if (!std::isfinite(l.item())) {
      throw NumericalError("inner adaptation: loss is " + std::to_string(l.item()) + " at step " + std::to_string(step));
    }
    const auto g = grad(l, cur, create_graph);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (create_graph) {
        cur[i] = cur[i] - scale(g[i], lr);
      } else {
        NdArray next = cur[i].value();
        const auto gv = g[i].value().data();
        auto nv = next.data();
        for (std::size_t j = 0; j < nv.size(); ++j) nv[j] -= lr * gv[j];
        cur[i] = parameter(std::move(next));
      }
    }
  }
  return cur;
}

MamlGradient maml_gradient(std::span<const Var> psi, const ParamLossFn& support, const ParamLossFn& query, double lr,
                           std::size_t steps, bool first_order) {
  GradModeGuard on(true);
  const auto adapted = sgd_adapt(psi, support, lr, steps, !first_order);
  const Var loss = query(adapted);
  MamlGradient out;
  out.query_loss = loss.item();
  for (const auto& g : grad(loss, first_order ? std::span<const Var>(adapted) : psi, false)) out.grads.push_back(g.value());
  return out;
}

double clip_global_norm(std::vector<NdArray>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.data()) v *= k;
  }
  return norm;
}

void Adam::step(std::span<Var> params, const std::vector<NdArray>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_value().data();
    const auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptation and meta-training

namespace {

ParamLossFn support_loss_fn(const ModelParams& layout, const ModelConfig& config, const EpisodeImages& images,
                            std::span<const std::size_t> labels, const TrainConfig& train, Rng& noise) {
  return [&layout, &config, images, labels, &train, &noise](std::span<const Var> p) {
    const ModelParams m = with_params(layout, p);
    return trident_loss(trident_forward(m, config, images, Reference::support, &noise), labels, train).total;
  };
}

double accuracy_of(const NdArray& probs, std::span<const std::size_t> labels) {
  const auto s = summarize_predictions(probs, labels);
  double hits = 0;
  for (auto c : s.correct) hits += c;
  return hits / double(labels.size());
}

}  // namespace

ModelParams inner_adapt(const ModelParams& params, const ModelConfig& config, const EpisodeImages& images,
                        std::span<const std::size_t> support_labels, const TrainConfig& train, Rng& noise,
                        bool create_graph) {
  train.validate();
  const auto psi = param_list(params);
  const auto adapted = sgd_adapt(psi, support_loss_fn(params, config, images, support_labels, train, noise),
                                 train.inner_lr, train.inner_steps, create_graph);
  return with_params(params, adapted);
}

std::vector<NdArray> meta_gradient(const ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                                   const TrainConfig& train, std::uint64_t noise_seed, MetaStepResult& stats) {
  train.validate();
  GradModeGuard on(true);
  const auto psi = param_list(params);
  std::vector<NdArray> total;
  for (const auto& v : psi) total.emplace_back(v.shape(), 0.0);
  stats.meta_loss = 0.0;
  stats.query_accuracy = 0.0;
  stats.support_loss_before = 0.0;

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Task& task = tasks[t];
    const EpisodeImages images{task.support_x, task.query_x};
    Rng noise(derive_seed(noise_seed, t));
    const auto support_loss = support_loss_fn(params, config, images, task.support_y, train, noise);
    {
      NoGradGuard off;
      stats.support_loss_before += support_loss(psi).item() / double(tasks.size());
    }
    double accuracy = 0.0;
    const ParamLossFn query_loss = [&](std::span<const Var> p) {
      const ModelParams adapted = with_params(params, p);
      const auto out = trident_forward(adapted, config, images, Reference::query, &noise);
      accuracy = accuracy_of(out.probs.value(), task.query_y);
      return trident_loss(out, task.query_y, train).total;
    };
    const auto mg = maml_gradient(psi, support_loss, query_loss, train.inner_lr, train.inner_steps, train.first_order);
    stats.meta_loss += mg.query_loss;
    stats.query_accuracy += accuracy / double(tasks.size());
    for (std::size_t i = 0; i < mg.grads.size(); ++i) {
      auto dst = total[i].data();
      const auto src = mg.grads[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return total;
}

MetaStepResult meta_step(ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                         const TrainConfig& train, Adam& optimizer, std::uint64_t noise_seed) {
  MetaStepResult stats;
  std::vector<NdArray> grads;
  try {
    grads = meta_gradient(params, config, tasks, train, noise_seed, stats);
  } catch (const NumericalError& e) {
    stats.skipped = true;
    stats.skip_reason = e.what();
    return stats;
  }
  bool finite = std::isfinite(stats.meta_loss);
  for (const auto& g : grads) finite = finite && g.all_finite();
  if (!finite) {
    stats.skipped = true;
    stats.skip_reason = "non-finite meta-gradient";
    return stats;
  }
  stats.grad_norm = clip_global_norm(grads, train.clip_norm);
  auto slots = param_slots(params);
  std::vector<Var> leaves;
  for (auto& s : slots) leaves.push_back(*s.var);
  optimizer.step(leaves, grads);
  return stats;
}

TaskPrediction predict_task(const ModelParams& params, const ModelConfig& config, const EpisodeImages& images,
                            std::span<const std::size_t> support_labels, const TrainConfig& train, std::uint64_t noise_seed) {
  TaskPrediction out;
  {
    NoGradGuard off;
    const auto pre = trident_forward(params, config, images, Reference::query, nullptr);
    out.mu_l_pre = pre.latent_l.mu.value();
    out.mu_s_pre = pre.latent_s.mu.value();
  }
  Rng noise(noise_seed);
  const ModelParams adapted = inner_adapt(params, config, images, support_labels, train, noise, false);
  NoGradGuard off;
  const auto post = trident_forward(adapted, config, images, Reference::query, nullptr);
  out.probs = post.probs.value();
  out.mu_l_post = post.latent_l.mu.value();
  out.mu_s_post = post.latent_s.mu.value();
  return out;
}

EvaluationResult evaluate(const ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                          const TrainConfig& train, std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: no tasks");
  EvaluationResult res;
  std::vector<double> accuracies, confidence;
  std::vector<std::uint8_t> correct;
  double brier_sum = 0.0;
  std::size_t rows = 0;
  auto safe_dbi = [](const NdArray& pts, std::span<const std::size_t> y) {
    try {
      return dbi(pts, y);
    } catch (const std::invalid_argument&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Task& task = tasks[t];
    const auto pred = predict_task(params, config, {task.support_x, task.query_x}, task.support_y, train, derive_seed(seed, t));
    for (std::size_t i = 0; i < pred.probs.size(); ++i)
      if (!std::isfinite(pred.probs.raw()[i]))
        throw NumericalError("evaluate: task " + std::to_string(t) + " adapted to non-finite class probabilities");
    // query labels enter here and nowhere earlier
    const auto& y = task.query_y;
    TaskRecord rec;
    rec.accuracy = accuracy_of(pred.probs, y);
    rec.dbi_label_pre = safe_dbi(pred.mu_l_pre, y);
    rec.dbi_label_post = safe_dbi(pred.mu_l_post, y);
    rec.dbi_semantic_pre = safe_dbi(pred.mu_s_pre, y);
    rec.dbi_semantic_post = safe_dbi(pred.mu_s_post, y);
    const auto s = summarize_predictions(pred.probs, y);
    confidence.insert(confidence.end(), s.confidence.begin(), s.confidence.end());
    correct.insert(correct.end(), s.correct.begin(), s.correct.end());
    brier_sum += brier(pred.probs, y) * double(y.size());
    rows += y.size();
    accuracies.push_back(rec.accuracy);
    res.tasks.push_back(rec);
    res.probs.push_back(pred.probs);
  }

  MetricsReport& r = res.report;
  r.n_tasks = tasks.size();
  if (accuracies.size() >= 2) {
    const auto ci = accuracy_ci(accuracies);
    r.accuracy_mean = ci.mean;
    r.ci95 = ci.ci95;
  } else {
    r.accuracy_mean = 100.0 * accuracies[0];
  }
  r.ece = ece(confidence, correct);
  r.mce = mce(confidence, correct);
  r.brier = brier_sum / double(rows);
  auto mean_of = [&](double TaskRecord::*field) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& rec : res.tasks)
      if (std::isfinite(rec.*field)) {
        s += rec.*field;
        ++n;
      }
    return n ? s / double(n) : std::numeric_limits<double>::quiet_NaN();
  };
  r.dbi_label_pre = mean_of(&TaskRecord::dbi_label_pre);
  r.dbi_label_post = mean_of(&TaskRecord::dbi_label_post);
  r.dbi_semantic_pre = mean_of(&TaskRecord::dbi_semantic_pre);
  r.dbi_semantic_post = mean_of(&TaskRecord::dbi_semantic_post);
  return res;
}

std::vector<Task> sample_tasks(const Dataset& dataset, const std::vector<std::size_t>& pool, const EpisodeSpec& spec,
                               std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Task> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_task(dataset, pool, spec, rng));
  return out;
}

}  // namespace trident
