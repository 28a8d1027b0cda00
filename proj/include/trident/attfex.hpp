#pragma once

// Attention-based transductive feature extraction.
//
// Feature maps of every image in the episode F [T, C', W', H'] are transposed
// so that the image axis becomes the channel axis, mixed by two 1x1
// convolutions, turned into per-feature-map query/key/value vectors, and
// combined by attention into a mask G [C', 1, W', H'] that multiplies every
// image's feature maps. The mask depends on all support and query images of
// the episode, which is what makes the extracted features task-aware.

#include <cstddef>
#include <string>

#include "trident/diff.hpp"
#include "trident/random.hpp"

namespace trident {

enum class AttentionMode {
  /// G_i = sum_j softmax_j(Q_i . K_j / sqrt(d_k)) V_j
  standard,
  /// G_i = sum_j [exp(Q_i . K_j) / (sqrt(d_k) sum_k exp(Q_i . K_k))] V_i,
  /// which reduces to V_i / sqrt(d_k).
  as_written,
};

AttentionMode parse_attention_mode(const std::string& text);
std::string to_string(AttentionMode mode);

struct AttFEXConfig {
  std::size_t episode_size = 55;  // T = N (K + Q)
  std::size_t mix_m = 64;
  std::size_t mix_n = 32;
  AttentionMode mode = AttentionMode::standard;
  /// ReLU after the Q/K/V projections (dropped for 1-shot episodes).
  bool qkv_relu = true;
};

struct AttFEXParams {
  Var w_m;  // [mix_m, T, 1, 1]
  Var w_n;  // [mix_n, mix_m, 1, 1]
  Var w_q;  // [1, mix_n, 1, 1]
  Var w_k;
  Var w_v;
};

AttFEXParams init_attfex(const AttFEXConfig& config, Rng& rng);

/// [T, C', W', H'] -> [C', T, W', H']
Var image_transpose(const Var& features);

/// ReLU(conv1x1(ReLU(conv1x1(F', W_M)), W_N)): [C', T, W', H'] -> [C', mix_n, W', H']
Var image_mix(const Var& transposed, const AttFEXParams& params);

struct QueryKeyValue {
  Var query;  // [C', 1, W', H']
  Var key;
  Var value;
};

QueryKeyValue qkv_extract(const Var& mixed, const AttFEXParams& params, bool relu);

struct AttentionResult {
  Var mask;     // G [C', 1, W', H']
  Var weights;  // [C', C'] attention weights (rows sum to 1)
};

AttentionResult attention_mask(const QueryKeyValue& qkv, AttentionMode mode);

/// F~[t, c] = G[c, 0] * F[t, c]
Var apply_mask(const Var& mask, const Var& features);

struct AttFEXOutput {
  Var support;  // F~^S
  Var query;    // F~^Q
  Var mask;
  Var weights;
};

/// Features are stacked support rows first, then query rows.
AttFEXOutput attfex_forward(const AttFEXParams& params, const AttFEXConfig& config, const Var& features,
                            std::size_t support_count);

}  // namespace trident
