#include "trident/variational.hpp"

#include <memory>
#include <vector>

namespace trident {

namespace {
constexpr double kProbFloor = 1e-12;

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape " + shape_to_string(a) + " does not match " + shape_to_string(b));
}
}  // namespace

Var GaussianLatent::sigma() const { return exp(scale(log_var, 0.5)); }

Var reparameterize(const GaussianLatent& latent, const NdArray& noise) {
  check_same(latent.mu.shape(), latent.log_var.shape(), "reparameterize");
  check_same(latent.mu.shape(), noise.shape(), "reparameterize");
  return latent.mu + latent.sigma() * constant(noise);
}

Var kl_term(const GaussianLatent& latent) {
  check_same(latent.mu.shape(), latent.log_var.shape(), "kl_term");
  if (latent.mu.rank() != 2) throw ShapeError("kl_term: expected [B, D], got " + shape_to_string(latent.mu.shape()));
  // 1 + 2 ln sigma - mu^2 - sigma^2 with 2 ln sigma = log_var
  const Var inner = add_scalar(latent.log_var - square(latent.mu) - exp(latent.log_var), 1.0);
  const std::size_t b = latent.mu.dim(0);
  return reshape(scale(sum_to(inner, {b, 1}), 0.5), {b});
}

Var recon_loss(const Var& x, const Var& reconstruction) {
  check_same(x.shape(), reconstruction.shape(), "recon_loss");
  const double batch = x.rank() > 0 ? double(x.dim(0)) : 1.0;
  return scale(sum(square(x - reconstruction)), 1.0 / batch);
}

Var xent_loss(const Var& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("xent_loss: probabilities " + shape_to_string(probs.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = probs.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= n) {
      throw std::out_of_range("xent_loss: label " + std::to_string(labels[r]) + " out of range for " + std::to_string(n) +
                              " classes");
    }
    (*index)[r] = r * n + labels[r];
  }
  const Var picked = gather(probs, {labels.size()}, std::move(index));
  return neg(mean(log(clamp_min(picked, kProbFloor))));
}

LossBreakdown elbo_loss(const Var& x, const Var& reconstruction, const Var& probs, std::span<const std::size_t> labels,
                        const GaussianLatent& latent_s, const GaussianLatent& latent_l, double alpha1, double alpha2) {
  const Var recon = recon_loss(x, reconstruction);
  const Var xent = xent_loss(probs, labels);
  const Var kl_s = mean(kl_term(latent_s));
  const Var kl_l = mean(kl_term(latent_l));
  const Var loss_r = scale(recon, alpha1) - kl_s;
  const Var loss_c = scale(xent, alpha2) - kl_l;

  LossBreakdown out;
  out.total = loss_r + loss_c;
  out.recon_mse = recon.item();
  out.kl_s = kl_s.item();
  out.kl_l = kl_l.item();
  out.xent = xent.item();
  out.loss_r = loss_r.item();
  out.loss_c = loss_c.item();
  out.total_value = out.total.item();
  return out;
}

}  // namespace trident
