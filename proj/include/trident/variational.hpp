#pragma once

// Gaussian latents and the two-part objective L = L_R + L_C:
//   L_R = a1 * ||x - x~||^2       - KL(mu_s, sigma_s)
//   L_C = -a2 * sum_n y_n ln p_n  - KL(mu_l, sigma_l)
// where KL(mu, sigma) = 1/2 sum_d (1 + 2 ln sigma - mu^2 - sigma^2) is the
// signed (non-positive) quantity, i.e. minus the divergence from N(0, I).
//
// Batch reduction: mean over images, sum over pixels / latent dimensions.

#include <cstddef>
#include <span>

#include "trident/diff.hpp"

namespace trident {

/// Axis-aligned Gaussian posterior per row: mu [B, D], log_var [B, D].
struct GaussianLatent {
  Var mu;
  Var log_var;

  /// exp(log_var / 2)
  Var sigma() const;
};

struct LossBreakdown {
  Var total;  // differentiable L_R + L_C
  double recon_mse = 0.0;
  double kl_s = 0.0;  // signed KL term, batch mean (<= 0)
  double kl_l = 0.0;
  double xent = 0.0;
  double loss_r = 0.0;
  double loss_c = 0.0;
  double total_value = 0.0;
};

/// z = mu + sigma * noise; noise enters as a constant.
Var reparameterize(const GaussianLatent& latent, const NdArray& noise);

/// Per-row signed KL term, shape [B].
Var kl_term(const GaussianLatent& latent);

/// Sum of squared pixel differences, averaged over the batch.
Var recon_loss(const Var& x, const Var& reconstruction);

/// Mean over rows of -ln max(p[row, label], 1e-12).
Var xent_loss(const Var& probs, std::span<const std::size_t> labels);

LossBreakdown elbo_loss(const Var& x, const Var& reconstruction, const Var& probs, std::span<const std::size_t> labels,
                        const GaussianLatent& latent_s, const GaussianLatent& latent_l, double alpha1, double alpha2);

}  // namespace trident
