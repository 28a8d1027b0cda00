#pragma once

// Conv4 encoder, Gaussian heads, classifier and upsampling decoder.

#include <array>
#include <cstddef>

#include "trident/diff.hpp"
#include "trident/random.hpp"
#include "trident/variational.hpp"

namespace trident {

inline constexpr std::size_t kEncoderWidth = 32;
inline constexpr std::size_t kEncoderBlocks = 4;
inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;

struct ConvBlockParams {
  Var weight;  // [32, C_in, 3, 3]
  Var bias;    // [32]
  Var gamma;   // [32]
  Var beta;    // [32]
};

struct ConvEncParams {
  std::array<ConvBlockParams, kEncoderBlocks> blocks;
};

struct GaussianHeadParams {
  Var mean_weight;    // [D_z, D_in]
  Var mean_bias;      // [D_z]
  Var logvar_weight;  // [D_z, D_in]
  Var logvar_bias;    // [D_z]
};

struct ClassifierParams {
  Var hidden_weight;  // [D_h, D_z]
  Var hidden_bias;
  Var out_weight;     // [N, D_h]
  Var out_bias;
};

/// Spatial plan of the decoder: a seed map of the encoder's output size, then
/// four size-targeted upsampling stages ending at the image size.
struct DecoderGeometry {
  std::size_t image_channels = 3;
  std::size_t seed_size = 2;
  std::array<std::size_t, kEncoderBlocks> ladder{};

  /// Seed = size halved (floor) four times; stage targets count back from the
  /// image size by ceil-halving, e.g. 84: 5 -> 11 -> 21 -> 42 -> 84.
  static DecoderGeometry for_image(std::size_t channels, std::size_t image_size);
};

struct DecoderParams {
  Var seed_weight;  // [32 * s * s, D_l + D_s]
  Var seed_bias;
  std::array<Var, kEncoderBlocks> conv_weight;  // 32 -> 32 -> 32 -> 32 -> C_image
  std::array<Var, kEncoderBlocks> conv_bias;
};

/// Spatial extent after the encoder's four 2x2 poolings.
std::size_t encoder_output_extent(std::size_t extent);

ConvEncParams init_conv_encoder(std::size_t in_channels, Rng& rng);
GaussianHeadParams init_gaussian_head(std::size_t in_features, std::size_t latent_dim, Rng& rng);
ClassifierParams init_classifier(std::size_t latent_dim, std::size_t hidden, std::size_t n_ways, Rng& rng);
DecoderParams init_decoder(std::size_t latent_total, const DecoderGeometry& geometry, Rng& rng);

/// 4 x (conv3x3 -> batch norm -> maxpool2 -> LeakyReLU(0.2)).
Var conv_encode(const ConvEncParams& params, const Var& images);

/// mean and log-variance heads over a flattened input [B, D_in].
GaussianLatent gaussian_head(const GaussianHeadParams& params, const Var& input);

/// Raw logits [B, N]: linear -> LeakyReLU(0.2) -> linear.
Var classify(const ClassifierParams& params, const Var& z_l);

/// Reconstruct images [B, C, S, S] from the concatenated latents.
Var decode(const DecoderParams& params, const DecoderGeometry& geometry, const Var& z_l, const Var& z_s);

}  // namespace trident
