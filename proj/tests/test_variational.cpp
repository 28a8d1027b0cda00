#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "trident/gradcheck.hpp"
#include "trident/random.hpp"
#include "trident/variational.hpp"

using namespace trident;

namespace {

GaussianLatent make_latent(const NdArray& mu, const NdArray& log_var, bool trainable = false) {
  if (trainable) return {parameter(mu), parameter(log_var)};
  return {constant(mu), constant(log_var)};
}

// Closed-form KL(N(mu, s^2) || N(0, 1)) summed over the row.
double kl_divergence_oracle(const NdArray& mu, const NdArray& log_var, std::size_t row) {
  const std::size_t d = mu.shape()[1];
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double m = mu[row * d + j], lv = log_var[row * d + j];
    acc += 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
  }
  return acc;
}

}  // namespace

TEST_CASE("reparameterize: eps = 0 gives mu, standard latent gives eps") {
  Rng rng(3);
  const NdArray mu = normal_array({4, 3}, rng);
  const NdArray lv = normal_array({4, 3}, rng);
  const NdArray eps = normal_array({4, 3}, rng);
  auto z0 = reparameterize(make_latent(mu, lv), NdArray({4, 3}, 0.0));
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(z0.value()[i] == mu[i]);
  auto z1 = reparameterize(make_latent(NdArray({4, 3}, 0.0), NdArray({4, 3}, 0.0)), eps);
  for (std::size_t i = 0; i < eps.size(); ++i) CHECK(z1.value()[i] == doctest::Approx(eps[i]).epsilon(1e-15));
}

TEST_CASE("reparameterize: Monte Carlo mean within 3 sigma / sqrt(n)") {
  constexpr std::size_t n = 100000;
  const double m = 0.7, lv = std::log(2.25);  // sigma 1.5
  Rng rng(11);
  auto z = reparameterize(make_latent(NdArray({n, 1}, m), NdArray({n, 1}, lv)), normal_array({n, 1}, rng));
  double acc = 0.0;
  for (double v : z.value().data()) acc += v;
  CHECK(std::abs(acc / n - m) <= 3.0 * 1.5 / std::sqrt(double(n)));
}

TEST_CASE("reparameterize: gradients reach mu and log_var only") {
  Rng rng(4);
  const NdArray eps = normal_array({2, 3}, rng);
  auto latent = make_latent(normal_array({2, 3}, rng), normal_array({2, 3}, rng), true);
  auto z = reparameterize(latent, eps);
  auto g = grad(sum(z), std::vector<Var>{latent.mu, latent.log_var});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(g[0].value()[i] == doctest::Approx(1.0));
    CHECK(g[1].value()[i] == doctest::Approx(0.5 * std::exp(0.5 * latent.log_var.value()[i]) * eps[i]));
  }
}

TEST_CASE("reparameterize: shape mismatch rejected") {
  CHECK_THROWS_AS(reparameterize(make_latent(NdArray({2, 3}, 0.0), NdArray({2, 3}, 0.0)), NdArray({3, 2}, 0.0)),
                  ShapeError);
  CHECK_THROWS_AS(reparameterize(make_latent(NdArray({2, 3}, 0.0), NdArray({2, 2}, 0.0)), NdArray({2, 3}, 0.0)),
                  ShapeError);
}

TEST_CASE("kl_term: hand values") {
  CHECK(kl_term(make_latent(NdArray({1, 4}, 0.0), NdArray({1, 4}, 0.0))).value()[0] == 0.0);
  CHECK(kl_term(make_latent(NdArray({1, 1}, 1.0), NdArray({1, 1}, 0.0))).value()[0] == doctest::Approx(-0.5));
}

TEST_CASE("kl_term: Monte Carlo estimate of E_q[ln q - ln p] within 1%") {
  constexpr std::size_t n = 100000;
  const std::vector<double> mu{0.8, -1.2, 0.3}, lv{std::log(0.5), std::log(1.7), std::log(0.9)};
  NdArray mu_a({1, 3}, mu), lv_a({1, 3}, lv);
  const double closed = -kl_term(make_latent(mu_a, lv_a)).value()[0];
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  double acc = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    double ln_q = 0.0, ln_p = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      const double sd = std::exp(0.5 * lv[d]);
      const double e = nd(rng), z = mu[d] + sd * e;
      ln_q += -0.5 * e * e - std::log(sd);
      ln_p += -0.5 * z * z;
    }
    acc += ln_q - ln_p;
  }
  const double mc = acc / n;
  CHECK(std::abs(mc - closed) / closed < 0.01);
}

TEST_CASE("kl_term property: <= 0 and equals minus the closed-form divergence") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + trial % 4, d = 1 + trial % 7;
    NdArray mu = normal_array({b, d}, rng), lv = normal_array({b, d}, rng);
    for (auto& v : mu.data()) v *= 2.0;
    auto k = kl_term(make_latent(mu, lv));
    REQUIRE(k.shape() == Shape{b});
    for (std::size_t r = 0; r < b; ++r) {
      CHECK(k.value()[r] <= 0.0);
      CHECK(k.value()[r] == doctest::Approx(-kl_divergence_oracle(mu, lv, r)).epsilon(1e-12));
    }
  }
  // equality only at the prior
  auto k0 = kl_term(make_latent(NdArray({2, 5}, 0.0), NdArray({2, 5}, 0.0)));
  CHECK(std::abs(k0.value()[0]) <= 1e-12);
  auto k1 = kl_term(make_latent(NdArray({1, 1}, 1e-3), NdArray({1, 1}, 0.0)));
  CHECK(k1.value()[0] < 0.0);
}

TEST_CASE("recon_loss") {
  Rng rng(6);
  const NdArray x = normal_array({3, 2, 4, 4}, rng);
  CHECK(recon_loss(constant(x), constant(x)).item() == 0.0);

  NdArray a({1, 1, 2, 2}, 0.0), b({1, 1, 2, 2}, 0.0);
  b.at({0, 0, 1, 0}) = 1.0;
  CHECK(recon_loss(constant(a), constant(b)).item() == 1.0);

  const NdArray y = normal_array({3, 2, 4, 4}, rng);
  double oracle = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) oracle += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(recon_loss(constant(x), constant(y)).item() == doctest::Approx(oracle / 3.0).epsilon(1e-13));
  CHECK_THROWS_AS(recon_loss(constant(x), constant(NdArray({3, 2, 4, 5}, 0.0))), ShapeError);
}

TEST_CASE("xent_loss") {
  const std::vector<std::size_t> labels{0, 3, 4};
  CHECK(xent_loss(constant(NdArray({3, 5}, 0.2)), labels).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  NdArray onehot({3, 5}, 0.0);
  for (std::size_t r = 0; r < 3; ++r) onehot.at({r, labels[r]}) = 1.0;
  CHECK(xent_loss(constant(onehot), labels).item() == 0.0);

  // wrong one-hot predictions hit the clamp, not infinity
  NdArray wrong({1, 2}, std::vector<double>{1.0, 0.0});
  const std::vector<std::size_t> one{1};
  CHECK(xent_loss(constant(wrong), one).item() == doctest::Approx(-std::log(1e-12)));

  Rng rng(7);
  auto probs = softmax(constant(normal_array({4, 6}, rng)));
  const std::vector<std::size_t> l4{5, 0, 2, 2};
  double oracle = 0.0;
  for (std::size_t r = 0; r < 4; ++r) oracle -= std::log(probs.value()[r * 6 + l4[r]]);
  CHECK(xent_loss(probs, l4).item() == doctest::Approx(oracle / 4).epsilon(1e-13));

  const std::vector<std::size_t> bad{0, 1, 5};
  CHECK_THROWS_AS(xent_loss(constant(NdArray({3, 5}, 0.2)), bad), std::out_of_range);
  CHECK_THROWS_AS(xent_loss(constant(NdArray({2, 5}, 0.2)), labels), ShapeError);
}

TEST_CASE("elbo_loss: zero at perfect fit and prior latents") {
  Rng rng(8);
  const NdArray x = normal_array({2, 1, 3, 3}, rng);
  NdArray p({2, 3}, 0.0);
  p.at({0, 1}) = 1.0;
  p.at({1, 2}) = 1.0;
  const std::vector<std::size_t> labels{1, 2};
  auto prior = make_latent(NdArray({2, 4}, 0.0), NdArray({2, 4}, 0.0));
  auto out = elbo_loss(constant(x), constant(x), constant(p), labels, prior, prior, 1e-2, 100.0);
  CHECK(out.total_value == 0.0);
  CHECK(out.total.item() == 0.0);
}

TEST_CASE("elbo_loss: composition of the separately tested terms") {
  Rng rng(9);
  const NdArray x = normal_array({3, 2, 4, 4}, rng), xr = normal_array({3, 2, 4, 4}, rng);
  auto probs = softmax(constant(normal_array({3, 5}, rng)));
  const std::vector<std::size_t> labels{4, 1, 0};
  auto ls = make_latent(normal_array({3, 6}, rng), normal_array({3, 6}, rng));
  auto ll = make_latent(normal_array({3, 6}, rng), normal_array({3, 6}, rng));
  const double a1 = 1e-2, a2 = 100.0;
  auto out = elbo_loss(constant(x), constant(xr), probs, labels, ls, ll, a1, a2);

  const double recon = recon_loss(constant(x), constant(xr)).item();
  const double xent = xent_loss(probs, labels).item();
  const double kls = mean(kl_term(ls)).item(), kll = mean(kl_term(ll)).item();
  CHECK(out.recon_mse == doctest::Approx(recon));
  CHECK(out.xent == doctest::Approx(xent));
  CHECK(out.kl_s == doctest::Approx(kls));
  CHECK(out.kl_l == doctest::Approx(kll));
  CHECK(out.loss_r == doctest::Approx(a1 * recon - kls).epsilon(1e-13));
  CHECK(out.loss_c == doctest::Approx(a2 * xent - kll).epsilon(1e-13));
  CHECK(out.total_value == doctest::Approx(out.loss_r + out.loss_c).epsilon(1e-13));

  // doubling a2 doubles L_C + kl_l, L_R untouched
  auto twice = elbo_loss(constant(x), constant(xr), probs, labels, ls, ll, a1, 2 * a2);
  CHECK(twice.loss_r == out.loss_r);
  CHECK(twice.loss_c + twice.kl_l == doctest::Approx(2.0 * (out.loss_c + out.kl_l)).epsilon(1e-13));
}

TEST_CASE("elbo_loss: gradient check on a tiny network") {
  Rng rng(10);
  const NdArray x = uniform_array({2, 4}, 1.0, rng);
  const NdArray eps_s = normal_array({2, 2}, rng), eps_l = normal_array({2, 2}, rng);
  const std::vector<std::size_t> labels{1, 0};
  std::vector<NdArray> params{
      (uniform_array({2, 4}, 0.5, rng)), (uniform_array({2}, 0.5, rng)),   // mu_s
      (uniform_array({2, 4}, 0.5, rng)), (uniform_array({2}, 0.5, rng)),   // lv_s
      (uniform_array({2, 6}, 0.5, rng)), (uniform_array({2}, 0.5, rng)),   // mu_l
      (uniform_array({2, 6}, 0.5, rng)), (uniform_array({2}, 0.5, rng)),   // lv_l
      (uniform_array({4, 4}, 0.5, rng)), (uniform_array({4}, 0.5, rng)),   // decoder
      (uniform_array({2, 2}, 0.5, rng)), (uniform_array({2}, 0.5, rng)),   // classifier
  };
  auto fn = [&](const std::vector<Var>& p) {
    const Var xv = constant(x);
    GaussianLatent ls{linear(xv, p[0], p[1]), linear(xv, p[2], p[3])};
    const Var zs = reparameterize(ls, eps_s);
    const Var hl = concat({xv, zs}, 1);
    GaussianLatent ll{linear(hl, p[4], p[5]), linear(hl, p[6], p[7])};
    const Var zl = reparameterize(ll, eps_l);
    const Var xr = linear(concat({zl, zs}, 1), p[8], p[9]);
    const Var probs = softmax(linear(zl, p[10], p[11]));
    return elbo_loss(xv, xr, probs, labels, ls, ll, 0.5, 2.0).total;
  };
  auto report = grad_check(fn, params, 1e-5, 1e-3);
  INFO(report.summary());
  CHECK(report.passed);
}
