#include "trident/netblocks.hpp"

#include <cmath>
#include <string>

namespace trident {

namespace {

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Var init_weight(const Shape& shape, std::size_t fan_in, Rng& rng) {
  return parameter(uniform_array(shape, 1.0 / std::sqrt(double(fan_in)), rng));
}

}  // namespace

std::size_t encoder_output_extent(std::size_t extent) {
  for (std::size_t i = 0; i < kEncoderBlocks; ++i) extent /= 2;
  return extent;
}

DecoderGeometry DecoderGeometry::for_image(std::size_t channels, std::size_t image_size) {
  if (image_size < 16) throw ShapeError("decoder: image size " + std::to_string(image_size) + " is below 16");
  DecoderGeometry g;
  g.image_channels = channels;
  g.seed_size = encoder_output_extent(image_size);
  std::size_t s = image_size;
  for (std::size_t i = kEncoderBlocks; i-- > 0;) {
    g.ladder[i] = s;
    s = (s + 1) / 2;
  }
  return g;
}

ConvEncParams init_conv_encoder(std::size_t in_channels, Rng& rng) {
  ConvEncParams p;
  std::size_t c_in = in_channels;
  for (auto& b : p.blocks) {
    const std::size_t fan_in = c_in * 9;
    b.weight = init_weight({kEncoderWidth, c_in, 3, 3}, fan_in, rng);
    b.bias = init_weight({kEncoderWidth}, fan_in, rng);
    b.gamma = parameter(NdArray({kEncoderWidth}, 1.0));
    b.beta = parameter(NdArray({kEncoderWidth}, 0.0));
    c_in = kEncoderWidth;
  }
  return p;
}

GaussianHeadParams init_gaussian_head(std::size_t in_features, std::size_t latent_dim, Rng& rng) {
  GaussianHeadParams p;
  p.mean_weight = init_weight({latent_dim, in_features}, in_features, rng);
  p.mean_bias = init_weight({latent_dim}, in_features, rng);
  p.logvar_weight = init_weight({latent_dim, in_features}, in_features, rng);
  p.logvar_bias = parameter(NdArray({latent_dim}, 0.0));
  return p;
}

ClassifierParams init_classifier(std::size_t latent_dim, std::size_t hidden, std::size_t n_ways, Rng& rng) {
  ClassifierParams p;
  p.hidden_weight = init_weight({hidden, latent_dim}, latent_dim, rng);
  p.hidden_bias = init_weight({hidden}, latent_dim, rng);
  p.out_weight = init_weight({n_ways, hidden}, hidden, rng);
  p.out_bias = init_weight({n_ways}, hidden, rng);
  return p;
}

DecoderParams init_decoder(std::size_t latent_total, const DecoderGeometry& geometry, Rng& rng) {
  DecoderParams p;
  const std::size_t seed_features = kEncoderWidth * geometry.seed_size * geometry.seed_size;
  p.seed_weight = init_weight({seed_features, latent_total}, latent_total, rng);
  p.seed_bias = init_weight({seed_features}, latent_total, rng);
  for (std::size_t i = 0; i < kEncoderBlocks; ++i) {
    const std::size_t out = (i + 1 == kEncoderBlocks) ? geometry.image_channels : kEncoderWidth;
    p.conv_weight[i] = init_weight({out, kEncoderWidth, 3, 3}, kEncoderWidth * 9, rng);
    p.conv_bias[i] = init_weight({out}, kEncoderWidth * 9, rng);
  }
  return p;
}

Var conv_encode(const ConvEncParams& params, const Var& images) {
  if (images.rank() != 4) throw ShapeError("conv_encode: expected [B,C,H,W], got " + shape_to_string(images.shape()));
  if (images.dim(2) < 16 || images.dim(3) < 16) {
    throw ShapeError("conv_encode: input " + shape_to_string(images.shape()) + " does not survive four 2x2 poolings");
  }
  Var h = images;
  for (const auto& b : params.blocks) {
    h = conv2d(h, b.weight, b.bias);
    h = batchnorm2d(h, b.gamma, b.beta, kBatchNormEps);
    h = maxpool2(h);
    h = leaky_relu(h, kLeakySlope);
  }
  return h;
}

GaussianLatent gaussian_head(const GaussianHeadParams& params, const Var& input) {
  return {linear(input, params.mean_weight, params.mean_bias), linear(input, params.logvar_weight, params.logvar_bias)};
}

Var classify(const ClassifierParams& params, const Var& z_l) {
  const Var h = leaky_relu(linear(z_l, params.hidden_weight, params.hidden_bias), kLeakySlope);
  return linear(h, params.out_weight, params.out_bias);
}

Var decode(const DecoderParams& params, const DecoderGeometry& geometry, const Var& z_l, const Var& z_s) {
  if (z_l.rank() != 2 || z_s.rank() != 2 || z_l.dim(0) != z_s.dim(0)) {
    throw ShapeError("decode: latents " + shape_to_string(z_l.shape()) + " and " + shape_to_string(z_s.shape()) +
                     " must be [B, D] with matching B");
  }
  if (z_l.dim(1) + z_s.dim(1) != params.seed_weight.dim(1)) {
    throw ShapeError("decode: latent dimension " + std::to_string(z_l.dim(1) + z_s.dim(1)) + " does not match decoder input " +
                     std::to_string(params.seed_weight.dim(1)));
  }
  const std::size_t batch = z_l.dim(0), s = geometry.seed_size;
  Var h = linear(concat({z_l, z_s}, 1), params.seed_weight, params.seed_bias);
  h = reshape(h, {batch, kEncoderWidth, s, s});
  for (std::size_t i = 0; i < kEncoderBlocks; ++i) {
    h = upsample_to(h, geometry.ladder[i], geometry.ladder[i]);
    h = conv2d(h, params.conv_weight[i], params.conv_bias[i]);
    if (i + 1 < kEncoderBlocks) h = leaky_relu(h, kLeakySlope);
  }
  return h;
}

}  // namespace trident
