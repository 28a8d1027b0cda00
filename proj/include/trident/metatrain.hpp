#pragma once

// The TRIDENT forward pass and episodic meta-training with second-order
// inner-loop adaptation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trident/attfex.hpp"
#include "trident/diff.hpp"
#include "trident/episodic.hpp"
#include "trident/metrics.hpp"
#include "trident/netblocks.hpp"
#include "trident/random.hpp"
#include "trident/variational.hpp"

namespace trident {

struct ModelConfig {
  EpisodeSpec episode;
  std::size_t latent_label = 64;
  std::size_t latent_semantic = 64;
  std::size_t classifier_hidden = 32;
  std::size_t mix_m = 64;
  std::size_t mix_n = 32;
  AttentionMode attention = AttentionMode::standard;
  bool attfex_enabled = true;
  /// Empty means "ReLU unless the episode is 1-shot".
  std::optional<bool> qkv_relu;

  AttFEXConfig attfex_config() const;
  DecoderGeometry decoder_geometry() const;
  /// Flattened feature size of one image after the encoder.
  std::size_t feature_size() const;
};

/// Psi = (theta1, theta2, phi1, phi2).
struct ModelParams {
  // phi2: semantic path
  ConvEncParams enc_semantic;
  GaussianHeadParams head_semantic;
  // phi1: label path
  ConvEncParams enc_label;
  AttFEXParams attfex;  // undefined members when AttFEX is off
  GaussianHeadParams head_label;
  ClassifierParams classifier;  // theta1
  DecoderParams decoder;        // theta2
};

ModelParams init_model(const ModelConfig& config, Rng& rng);

struct ParamSlot {
  std::string name;
  Var* var;
};

/// Every defined parameter in a fixed order with a stable dotted name.
std::vector<ParamSlot> param_slots(ModelParams& params);
std::vector<Var> param_list(const ModelParams& params);
/// Copy of `layout` whose parameters are replaced, in param_slots order.
ModelParams with_params(const ModelParams& layout, std::span<const Var> values);
std::size_t parameter_count(const ModelParams& params);
/// Fresh leaves holding copies of the current values.
ModelParams clone_params(const ModelParams& params);

enum class Reference { support, query };

/// Images of one episode. Labels are deliberately absent.
struct EpisodeImages {
  const NdArray& support_x;
  const NdArray& query_x;
};

struct ForwardOutput {
  GaussianLatent latent_s;
  GaussianLatent latent_l;
  Var reconstruction;
  Var probs;
  Var reference_x;
};

/// Noise for the two reparameterizations; nullptr means the posterior mean.
ForwardOutput trident_forward(const ModelParams& params, const ModelConfig& config, const EpisodeImages& images,
                              Reference reference, Rng* noise);

struct TrainConfig {
  double alpha1 = 1e-2;
  double alpha2 = 100.0;
  double inner_lr = 1e-3;  // alpha
  double meta_lr = 1e-4;   // beta
  std::size_t meta_batch = 20;  // B
  std::size_t inner_steps = 5;  // n
  double clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t meta_steps = 1000;
  std::uint64_t seed = 1;
  /// Stop the gradient at the adapted parameters (first-order contrast).
  bool first_order = false;

  void validate() const;
};

LossBreakdown trident_loss(const ForwardOutput& out, std::span<const std::size_t> labels, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Generic differentiable adaptation

using ParamLossFn = std::function<Var(std::span<const Var> params)>;

/// n steps of p <- p - lr * dL/dp. With create_graph the result stays a
/// differentiable function of the inputs; otherwise each step's result is a
/// fresh leaf. Throws NumericalError on a non-finite loss.
std::vector<Var> sgd_adapt(std::span<const Var> params, const ParamLossFn& loss, double lr, std::size_t steps,
                           bool create_graph);

struct MamlGradient {
  double query_loss = 0.0;
  std::vector<NdArray> grads;
};

/// Gradient of query(adapt(psi)) with respect to psi, where adapt is
/// sgd_adapt on `support`. first_order stops the gradient at the adapted
/// parameters instead of differentiating through the inner loop.
MamlGradient maml_gradient(std::span<const Var> psi, const ParamLossFn& support, const ParamLossFn& query, double lr,
                           std::size_t steps, bool first_order);

/// Clip to a global L2 norm; returns the pre-clip norm.
double clip_global_norm(std::vector<NdArray>& grads, double max_norm);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// In-place update of leaf parameters.
  void step(std::span<Var> params, const std::vector<NdArray>& grads);
  std::size_t steps() const { return t_; }

  std::vector<NdArray>& first_moment() { return m_; }
  std::vector<NdArray>& second_moment() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<NdArray> m_, v_;
};

// ---------------------------------------------------------------------------
// TRIDENT adaptation and meta-training

/// Adapted copy Psi' after n SGD steps on the support loss; the input is untouched.
ModelParams inner_adapt(const ModelParams& params, const ModelConfig& config, const EpisodeImages& images,
                        std::span<const std::size_t> support_labels, const TrainConfig& train, Rng& noise,
                        bool create_graph);

struct MetaStepResult {
  double meta_loss = 0.0;  // summed query loss over tasks
  double grad_norm = 0.0;  // before clipping
  double support_loss_before = 0.0;
  double query_accuracy = 0.0;  // at Psi', during training
  bool skipped = false;
  std::string skip_reason;
};

/// Meta-gradient of sum_i L^{Q_i}(Psi'_i(Psi)) with respect to Psi.
std::vector<NdArray> meta_gradient(const ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                                   const TrainConfig& train, std::uint64_t noise_seed, MetaStepResult& stats);

MetaStepResult meta_step(ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                         const TrainConfig& train, Adam& optimizer, std::uint64_t noise_seed);

/// Query predictions for one task; only support labels are visible here.
struct TaskPrediction {
  NdArray probs;      // [N*Q, N]
  NdArray mu_l_pre;   // query label-latent means before adaptation
  NdArray mu_l_post;
  NdArray mu_s_pre;
  NdArray mu_s_post;
};

TaskPrediction predict_task(const ModelParams& params, const ModelConfig& config, const EpisodeImages& images,
                            std::span<const std::size_t> support_labels, const TrainConfig& train, std::uint64_t noise_seed);

struct TaskRecord {
  double accuracy = 0.0;
  double dbi_label_pre = 0.0;
  double dbi_label_post = 0.0;
  double dbi_semantic_pre = 0.0;
  double dbi_semantic_post = 0.0;
};

struct EvaluationResult {
  MetricsReport report;
  std::vector<TaskRecord> tasks;
  std::vector<NdArray> probs;  // per task
};

/// Query labels are consumed only by the metric computations.
EvaluationResult evaluate(const ModelParams& params, const ModelConfig& config, std::span<const Task> tasks,
                          const TrainConfig& train, std::uint64_t seed);

/// `count` tasks from `pool`, reproducible from the seed.
std::vector<Task> sample_tasks(const Dataset& dataset, const std::vector<std::size_t>& pool, const EpisodeSpec& spec,
                               std::size_t count, std::uint64_t seed);

}  // namespace trident
