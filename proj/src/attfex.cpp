#include "trident/attfex.hpp"

#include <cmath>
#include <stdexcept>

namespace trident {

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "standard") return AttentionMode::standard;
  if (text == "as-written" || text == "as_written") return AttentionMode::as_written;
  throw std::invalid_argument("unknown attention mode '" + text + "' (expected standard or as-written)");
}

std::string to_string(AttentionMode mode) { return mode == AttentionMode::standard ? "standard" : "as-written"; }

AttFEXParams init_attfex(const AttFEXConfig& config, Rng& rng) {
  auto weight = [&](std::size_t out, std::size_t in) {
    return parameter(uniform_array({out, in, 1, 1}, 1.0 / std::sqrt(double(in)), rng));
  };
  AttFEXParams p;
  p.w_m = weight(config.mix_m, config.episode_size);
  p.w_n = weight(config.mix_n, config.mix_m);
  p.w_q = weight(1, config.mix_n);
  p.w_k = weight(1, config.mix_n);
  p.w_v = weight(1, config.mix_n);
  return p;
}

Var image_transpose(const Var& features) { return swap01(features); }

Var image_mix(const Var& transposed, const AttFEXParams& params) {
  if (transposed.rank() != 4 || transposed.dim(1) != params.w_m.dim(1)) {
    throw ShapeError("image_mix: episode holds " + (transposed.rank() == 4 ? std::to_string(transposed.dim(1)) : std::string("?")) +
                     " images but W_M was built for " + std::to_string(params.w_m.dim(1)) +
                     "; rebuild the model for this (N, K, Q) configuration");
  }
  const Var m = relu(conv1x1(transposed, params.w_m));
  return relu(conv1x1(m, params.w_n));
}

QueryKeyValue qkv_extract(const Var& mixed, const AttFEXParams& params, bool relu_on) {
  auto project = [&](const Var& w) {
    Var out = conv1x1(mixed, w);
    return relu_on ? relu(out) : out;
  };
  return {project(params.w_q), project(params.w_k), project(params.w_v)};
}

AttentionResult attention_mask(const QueryKeyValue& qkv, AttentionMode mode) {
  const Shape& shape = qkv.query.shape();
  if (shape.size() != 4 || shape[1] != 1 || qkv.key.shape() != shape || qkv.value.shape() != shape) {
    throw ShapeError("attention_mask: Q/K/V must share shape [C', 1, W', H'], got " + shape_to_string(shape) + ", " +
                     shape_to_string(qkv.key.shape()) + ", " + shape_to_string(qkv.value.shape()));
  }
  const std::size_t maps = shape[0], d_k = shape[2] * shape[3];
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(d_k));
  const Var q = reshape(qkv.query, {maps, d_k});
  const Var k = reshape(qkv.key, {maps, d_k});
  const Var v = reshape(qkv.value, {maps, d_k});
  const Var scores = matmul(q, k, false, true);  // [C', C']

  AttentionResult out;
  if (mode == AttentionMode::standard) {
    out.weights = softmax(scale(scores, inv_sqrt_dk));
    out.mask = reshape(matmul(out.weights, v), shape);
  } else {
    out.weights = softmax(scores);
    const Var row_mass = sum_to(out.weights, {maps, 1});
    out.mask = reshape(scale(row_mass * v, inv_sqrt_dk), shape);
  }
  return out;
}

Var apply_mask(const Var& mask, const Var& features) {
  if (mask.rank() != 4 || features.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != features.dim(1) ||
      mask.dim(2) != features.dim(2) || mask.dim(3) != features.dim(3)) {
    throw ShapeError("apply_mask: mask " + shape_to_string(mask.shape()) + " does not fit features " +
                     shape_to_string(features.shape()));
  }
  return reshape(mask, {1, mask.dim(0), mask.dim(2), mask.dim(3)}) * features;
}

AttFEXOutput attfex_forward(const AttFEXParams& params, const AttFEXConfig& config, const Var& features,
                            std::size_t support_count) {
  if (features.rank() != 4 || support_count > features.dim(0)) {
    throw ShapeError("attfex_forward: support count " + std::to_string(support_count) + " exceeds features " +
                     shape_to_string(features.shape()));
  }
  const Var mixed = image_mix(image_transpose(features), params);
  const auto attention = attention_mask(qkv_extract(mixed, params, config.qkv_relu), config.mode);
  const Var masked = apply_mask(attention.mask, features);
  AttFEXOutput out;
  out.support = slice0(masked, 0, support_count);
  out.query = slice0(masked, support_count, features.dim(0) - support_count);
  out.mask = attention.mask;
  out.weights = attention.weights;
  return out;
}

}  // namespace trident
