#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "trident/diff.hpp"
#include "trident/gradcheck.hpp"

using namespace trident;

namespace {

NdArray randn(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  NdArray a(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : a.data()) v = d(rng);
  return a;
}

// Values spread apart so no 2x2 window or ReLU kink sits within the
// finite-difference step.
NdArray spread(Shape shape, std::mt19937_64& rng) {
  NdArray a(std::move(shape));
  std::vector<double> vals(a.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 0.05 * double(i) + 0.013;
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), a.data().begin());
  return a;
}

std::size_t rand_extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("zero weight gives the bias everywhere") {
    std::mt19937_64 rng(1);
    auto x = constant(randn({2, 3, 4, 5}, rng));
    auto w = constant(NdArray({4, 3, 3, 3}, 0.0));
    auto b = constant(NdArray({4}, std::vector<double>{1, -2, 3, 0.5}));
    auto y = conv2d(x, w, b);
    REQUIRE(y.shape() == Shape{2, 4, 4, 5});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.value()[i] == b.value()[(i / 20) % 4]);
  }

  TEST_CASE("identity kernel reproduces the input") {
    std::mt19937_64 rng(2);
    auto x = constant(randn({2, 1, 5, 5}, rng));
    NdArray k({1, 1, 3, 3}, 0.0);
    k.at({0, 0, 1, 1}) = 1.0;
    auto y = conv2d(x, constant(k), constant(NdArray({1}, 0.0)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x.value()[i]);
  }

  TEST_CASE("ones kernel on ones counts the valid window") {
    auto y = conv2d(constant(NdArray({1, 1, 3, 3}, 1.0)), constant(NdArray({1, 1, 3, 3}, 1.0)));
    CHECK(y.value().at({0, 0, 1, 1}) == 9.0);
    for (auto [i, j] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) CHECK(y.value().at({0, 0, std::size_t(i), std::size_t(j)}) == 4.0);
    for (auto [i, j] : {std::pair{0, 1}, {1, 0}, {1, 2}, {2, 1}}) CHECK(y.value().at({0, 0, std::size_t(i), std::size_t(j)}) == 6.0);
  }

  TEST_CASE("shape mismatch names both shapes") {
    auto x = constant(NdArray({1, 2, 4, 4}));
    auto w = constant(NdArray({3, 5, 3, 3}));
    try {
      conv2d(x, w);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1,2,4,4]") != std::string::npos);
      CHECK(msg.find("[3,5,3,3]") != std::string::npos);
    }
  }
}

TEST_SUITE("conv1x1") {
  TEST_CASE("identity weight reproduces the input") {
    std::mt19937_64 rng(3);
    auto x = constant(randn({2, 3, 2, 2}, rng));
    NdArray w({3, 3, 1, 1}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) w.at({i, i, 0, 0}) = 1.0;
    auto y = conv1x1(x, constant(w));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x.value()[i]);
  }

  TEST_CASE("ones weight sums the channels") {
    std::mt19937_64 rng(4);
    auto x = constant(randn({1, 3, 2, 3}, rng));
    auto y = conv1x1(x, constant(NdArray({1, 3, 1, 1}, 1.0)));
    for (std::size_t p = 0; p < 6; ++p) {
      const double expect = x.value()[p] + x.value()[6 + p] + x.value()[12 + p];
      CHECK(y.value()[p] == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  TEST_CASE("random 2 -> 4 map equals a per-pixel matrix-vector product") {
    std::mt19937_64 rng(5);
    auto x = randn({3, 2, 3, 2}, rng);
    auto w = randn({4, 2, 1, 1}, rng);
    auto y = conv1x1(constant(x), constant(w));
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t h = 0; h < 3; ++h)
          for (std::size_t v = 0; v < 2; ++v) {
            double acc = 0;
            for (std::size_t c = 0; c < 2; ++c) acc += w.at({o, c, 0, 0}) * x.at({b, c, h, v});
            CHECK(y.value().at({b, o, h, v}) == doctest::Approx(acc).epsilon(1e-13));
          }
  }

  TEST_CASE("rejects non 1x1 weights") { CHECK_THROWS_AS(conv1x1(constant(NdArray({1, 1, 2, 2})), constant(NdArray({1, 1, 3, 3}))), ShapeError); }
}

TEST_SUITE("batchnorm2d") {
  TEST_CASE("unit affine standardizes each channel") {
    std::mt19937_64 rng(6);
    auto x = constant(randn({4, 3, 5, 5}, rng, 3.0));
    auto y = batchnorm2d(x, constant(NdArray({3}, 1.0)), constant(NdArray({3}, 0.0)), 1e-5);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t p = 0; p < 25; ++p) m += y.value()[(b * 3 + c) * 25 + p];
      m /= 100;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t p = 0; p < 25; ++p) v += std::pow(y.value()[(b * 3 + c) * 25 + p] - m, 2);
      v /= 100;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("constant channel maps to beta") {
    auto y = batchnorm2d(constant(NdArray({2, 1, 3, 3}, 7.5)), constant(NdArray({1}, 2.0)), constant(NdArray({1}, -0.25)));
    for (double v : y.value().data()) CHECK(v == -0.25);
  }

  TEST_CASE("gamma 2 beta 3 gives mean 3 and std 2") {
    std::mt19937_64 rng(7);
    auto y = batchnorm2d(constant(randn({8, 2, 3, 3}, rng)), constant(NdArray({2}, 2.0)), constant(NdArray({2}, 3.0)), 1e-12);
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t p = 0; p < 9; ++p) m += y.value()[(b * 2) * 9 + p];
    m /= 72;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t p = 0; p < 9; ++p) v += std::pow(y.value()[(b * 2) * 9 + p] - m, 2);
    CHECK(m == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::sqrt(v / 72) == doctest::Approx(2.0).epsilon(1e-9));
  }

  TEST_CASE("single value per channel is rejected") {
    CHECK_THROWS_AS(batchnorm2d(constant(NdArray({1, 2, 1, 1})), constant(NdArray({2}, 1.0)), constant(NdArray({2}, 0.0))),
                    ShapeError);
  }
}

TEST_SUITE("maxpool2") {
  TEST_CASE("2x2 window picks the max") {
    auto y = maxpool2(constant(NdArray({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 4.0);
  }

  TEST_CASE("84 pools to 42 and four times to 5") {
    Var x = constant(NdArray({1, 1, 84, 84}));
    x = maxpool2(x);
    CHECK(x.shape() == Shape{1, 1, 42, 42});
    for (int i = 0; i < 3; ++i) x = maxpool2(x);
    CHECK(x.shape() == Shape{1, 1, 5, 5});
  }

  TEST_CASE("ties route the gradient to the first element of each window") {
    auto x = parameter(NdArray({1, 1, 4, 5}, 2.0));
    backward(sum(maxpool2(x)));
    const auto& g = x.grad();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        const bool first = (i % 2 == 0) && (j % 2 == 0) && j < 4;
        CHECK(g.at({0, 0, i, j}) == (first ? 1.0 : 0.0));
      }
  }

  TEST_CASE("extent below 2 is rejected") { CHECK_THROWS_AS(maxpool2(constant(NdArray({1, 1, 1, 4}))), ShapeError); }
}

TEST_SUITE("leaky_relu") {
  TEST_CASE("values") {
    auto y = leaky_relu(constant(NdArray({3}, std::vector<double>{-1.0, 0.0, 2.0})), 0.2);
    CHECK(y.value()[0] == doctest::Approx(-0.2));
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == 2.0);
    auto r = relu(constant(NdArray({2}, std::vector<double>{-3.0, 1.5})));
    CHECK(r.value()[0] == 0.0);
    CHECK(r.value()[1] == 1.5);
  }

  TEST_CASE("subgradient at zero is one") {
    auto x = parameter(NdArray({1}, 0.0));
    backward(sum(leaky_relu(x, 0.2)));
    CHECK(x.grad()[0] == 1.0);
  }
}

TEST_SUITE("linear") {
  TEST_CASE("identity and zero weights") {
    std::mt19937_64 rng(8);
    auto x = constant(randn({4, 3}, rng));
    NdArray eye({3, 3}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    auto y = linear(x, constant(eye), constant(NdArray({3}, 0.0)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x.value()[i]);
    auto bias = NdArray({2}, std::vector<double>{0.5, -1.5});
    auto z = linear(x, constant(NdArray({2, 3}, 0.0)), constant(bias));
    for (std::size_t r = 0; r < 4; ++r) {
      CHECK(z.value().at({r, 0}) == 0.5);
      CHECK(z.value().at({r, 1}) == -1.5);
    }
  }

  TEST_CASE("random 3 -> 2 map equals the dot-product oracle") {
    std::mt19937_64 rng(9);
    auto x = randn({5, 3}, rng);
    auto w = randn({2, 3}, rng);
    auto b = randn({2}, rng);
    auto y = linear(constant(x), constant(w), constant(b));
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t o = 0; o < 2; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < 3; ++i) acc += x.at({r, i}) * w.at({o, i});
        CHECK(y.value().at({r, o}) == doctest::Approx(acc).epsilon(1e-14));
      }
  }

  TEST_CASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(linear(constant(NdArray({2, 3})), constant(NdArray({2, 4})), constant(NdArray({2}))), ShapeError);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("closed-form cases") {
    auto a = softmax(constant(NdArray({2}, std::vector<double>{0.0, 0.0})));
    CHECK(a.value()[0] == 0.5);
    auto b = softmax(constant(NdArray({2}, std::vector<double>{1000.0, 1000.0})));
    CHECK(b.value()[0] == 0.5);
    CHECK(b.value()[1] == 0.5);
    auto c = softmax(constant(NdArray({2}, std::vector<double>{0.0, std::log(3.0)})));
    CHECK(c.value()[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(c.value()[1] == doctest::Approx(0.75).epsilon(1e-15));
  }

  TEST_CASE("rows are positive and sum to one") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t rows = rand_extent(rng, 1, 8), n = rand_extent(rng, 1, 8);
      auto p = softmax(constant(randn({rows, n}, rng, 20.0)));
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(p.value().at({r, j}) > 0.0);
          s += p.value().at({r, j});
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_SUITE("upsample_to") {
  TEST_CASE("replication") {
    auto y = upsample_to(constant(NdArray({1, 1, 1, 1}, 3.5)), 2, 2);
    for (double v : y.value().data()) CHECK(v == 3.5);
  }

  TEST_CASE("exact doubling duplicates pixels") {
    std::mt19937_64 rng(11);
    auto x = randn({1, 2, 3, 3}, rng);
    auto y = upsample_to(constant(x), 6, 6);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) CHECK(y.value().at({0, c, i, j}) == x.at({0, c, i / 2, j / 2}));
  }

  TEST_CASE("5 -> 11 follows floor(i * 5 / 11)") {
    NdArray x({1, 1, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) x[i] = double(i);
    auto y = upsample_to(constant(x), 11, 11);
    for (std::size_t i = 0; i < 11; ++i)
      for (std::size_t j = 0; j < 11; ++j) CHECK(y.value().at({0, 0, i, j}) == double((i * 5 / 11) * 5 + (j * 5 / 11)));
  }

  TEST_CASE("shrinking target is rejected") { CHECK_THROWS_AS(upsample_to(constant(NdArray({1, 1, 4, 4})), 3, 4), ShapeError); }
}

TEST_SUITE("backward") {
  TEST_CASE("x^2 at 3 has gradient 6") {
    auto x = parameter(NdArray::scalar(3.0));
    backward(square(x));
    CHECK(x.grad().item() == 6.0);
  }

  TEST_CASE("second derivative of x^3 at 2 is 12") {
    auto x = parameter(NdArray::scalar(2.0));
    auto y = mul(square(x), x);
    auto g = grad(y, std::vector<Var>{x}, true)[0];
    CHECK(g.item() == doctest::Approx(12.0));
    auto h = grad(g, std::vector<Var>{x}, false)[0];
    CHECK(h.item() == doctest::Approx(12.0));
  }

  TEST_CASE("non-scalar root is rejected") {
    auto x = parameter(NdArray({3}, 1.0));
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
  }

  TEST_CASE("gradient of an unrelated input is zero") {
    auto x = parameter(NdArray({2}, 1.0));
    auto y = parameter(NdArray({2}, 1.0));
    auto g = grad(sum(square(x)), std::vector<Var>{x, y});
    CHECK(g[1].value()[0] == 0.0);
    CHECK(g[1].value()[1] == 0.0);
  }

  TEST_CASE("first-order grads are constants and second-order grads are recorded") {
    auto x = parameter(NdArray({2}, 1.5));
    auto g0 = grad(sum(square(x)), std::vector<Var>{x}, false)[0];
    CHECK_FALSE(g0.requires_grad());
    auto g1 = grad(sum(mul(square(x), x)), std::vector<Var>{x}, true)[0];
    CHECK(g1.requires_grad());
  }

  TEST_CASE("linearity over independent subgraphs") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      auto a = parameter(randn({rand_extent(rng, 1, 6), rand_extent(rng, 1, 6)}, rng));
      auto b = parameter(randn({rand_extent(rng, 1, 6)}, rng));
      auto fa = [&] { return sum(exp(scale(a, 0.3))); };
      auto fb = [&] { return sum(mul(square(b), b)); };
      auto joint = grad(add(fa(), fb()), std::vector<Var>{a, b});
      auto ga = grad(fa(), std::vector<Var>{a})[0];
      auto gb = grad(fb(), std::vector<Var>{b})[0];
      for (std::size_t i = 0; i < ga.size(); ++i) CHECK(joint[0].value()[i] == doctest::Approx(ga.value()[i]).epsilon(1e-14));
      for (std::size_t i = 0; i < gb.size(); ++i) CHECK(joint[1].value()[i] == doctest::Approx(gb.value()[i]).epsilon(1e-14));
    }
  }

  TEST_CASE("non-finite detection mode") {
    set_finite_checks(true);
    CHECK_THROWS_AS(log(constant(NdArray({1}, -1.0))), NumericalError);
    set_finite_checks(false);
    CHECK_NOTHROW(log(constant(NdArray({1}, -1.0))));
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("linear passes") {
    std::mt19937_64 rng(13);
    auto r = grad_check([](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
                        {randn({4, 3}, rng), randn({2, 3}, rng), randn({2}, rng)});
    CHECK_MESSAGE(r.passed, r.summary());
  }

  TEST_CASE("conv2d passes") {
    std::mt19937_64 rng(14);
    auto r = grad_check([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2]); },
                        {randn({2, 2, 4, 5}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng)});
    CHECK_MESSAGE(r.passed, r.summary());
  }

  TEST_CASE("corrupted gradient rule fails") {
    // y = 2x recorded with a backward rule claiming dy/dx = 3
    auto bad = [](const std::vector<Var>& v) {
      NdArray out = v[0].value();
      for (auto& x : out.data()) x *= 2.0;
      return record("bad_double", std::move(out), {v[0]},
                    [](const Var&, const Var& g, const std::vector<bool>&) -> std::vector<Var> { return {scale(g, 3.0)}; });
    };
    std::mt19937_64 rng(15);
    auto r = grad_check(bad, {randn({3}, rng)});
    CHECK_FALSE(r.passed);
    CHECK(r.worst_rel_error > 0.3);
  }
}

// Every differentiable op on random shapes (extents <= 8), central
// differences with step 1e-3 and relative tolerance 1e-3.
TEST_CASE("every op matches finite differences on random shapes") {
  std::mt19937_64 rng(99);
  auto check = [](const char* name, const DiffFunction& f, const std::vector<NdArray>& in) {
    auto r = grad_check(f, in, 1e-3, 1e-3);
    CHECK_MESSAGE(r.passed, name << ": " << r.summary());
  };
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t b = rand_extent(rng, 1, 4), c = rand_extent(rng, 1, 4), h = rand_extent(rng, 2, 6),
                      w = rand_extent(rng, 2, 6), o = rand_extent(rng, 1, 4), m = rand_extent(rng, 1, 8),
                      n = rand_extent(rng, 1, 8), k = rand_extent(rng, 1, 8);
    check("add-broadcast", [](auto& v) { return add(v[0], v[1]); }, {randn({m, n}, rng), randn({1, n}, rng)});
    check("sub-broadcast", [](auto& v) { return sub(v[0], v[1]); }, {randn({m, 1}, rng), randn({m, n}, rng)});
    check("mul", [](auto& v) { return mul(v[0], v[1]); }, {randn({m, n}, rng), randn({m, n}, rng)});
    NdArray denom = randn({1, n}, rng);
    for (auto& x : denom.data()) x = (x >= 0 ? 1.0 : -1.0) * (0.5 + std::abs(x));
    check("div", [](auto& v) { return div(v[0], v[1]); }, {randn({m, n}, rng), denom});
    check("exp", [](auto& v) { return exp(v[0]); }, {randn({m, n}, rng)});
    NdArray pos = randn({m, n}, rng);
    for (auto& x : pos.data()) x = 0.5 + std::abs(x);
    check("log", [](auto& v) { return log(v[0]); }, {pos});
    check("pow", [](auto& v) { return pow_scalar(v[0], -0.5); }, {pos});
    check("leaky_relu", [](auto& v) { return leaky_relu(v[0], 0.2); }, {spread({m, n}, rng)});
    check("clamp_min", [](auto& v) { return clamp_min(v[0], 0.1); }, {spread({m, n}, rng)});
    check("sum_to", [](auto& v) { return sum_to(v[0], {1, v[0].dim(1)}); }, {randn({m, n}, rng)});
    check("broadcast_to", [m](auto& v) { return broadcast_to(v[0], {m, v[0].dim(1)}); }, {randn({1, n}, rng)});
    check("mean", [](auto& v) { return mean(v[0]); }, {randn({m, n}, rng)});
    check("matmul", [](auto& v) { return matmul(v[0], v[1]); }, {randn({m, k}, rng), randn({k, n}, rng)});
    check("matmul-tt", [](auto& v) { return matmul(v[0], v[1], true, true); }, {randn({k, m}, rng), randn({n, k}, rng)});
    check("linear", [](auto& v) { return linear(v[0], v[1], v[2]); }, {randn({m, k}, rng), randn({n, k}, rng), randn({n}, rng)});
    check("softmax", [](auto& v) { return softmax(v[0]); }, {randn({m, n}, rng)});
    check("conv2d", [](auto& v) { return conv2d(v[0], v[1], v[2]); },
          {randn({b, c, h, w}, rng), randn({o, c, 3, 3}, rng), randn({o}, rng)});
    check("conv1x1", [](auto& v) { return conv1x1(v[0], v[1]); }, {randn({b, c, h, w}, rng), randn({o, c, 1, 1}, rng)});
    check("conv2d_input_grad", [&](auto& v) { return conv2d_input_grad(v[0], v[1], {b, c, h, w}); },
          {randn({b, o, h, w}, rng), randn({o, c, 3, 3}, rng)});
    check("conv2d_weight_grad", [&](auto& v) { return conv2d_weight_grad(v[0], v[1], {o, c, 3, 3}); },
          {randn({b, c, h, w}, rng), randn({b, o, h, w}, rng)});
    check("batchnorm2d", [](auto& v) { return batchnorm2d(v[0], v[1], v[2]); },
          {randn({b + 1, c, h, w}, rng), randn({c}, rng), randn({c}, rng)});
    check("maxpool2", [](auto& v) { return maxpool2(v[0]); }, {spread({b, c, h, w}, rng)});
    check("upsample_to", [h, w](auto& v) { return upsample_to(v[0], 2 * h + 1, w + 3); }, {randn({b, c, h, w}, rng)});
    check("swap01", [](auto& v) { return swap01(v[0]); }, {randn({b, c, h, w}, rng)});
    check("slice0", [](auto& v) { return slice0(v[0], 1, v[0].dim(0) - 1); }, {randn({b + 1, c, h, w}, rng)});
    check("concat", [](auto& v) { return concat({v[0], v[1]}, 1); }, {randn({m, n}, rng), randn({m, k}, rng)});
    check("flatten", [](auto& v) { return flatten(v[0]); }, {randn({b, c, h, w}, rng)});
  }
}

TEST_CASE("grad-of-grad matches finite differences of the first gradient") {
  std::mt19937_64 rng(21);
  auto check = [](const char* name, const DiffFunction& f, const std::vector<NdArray>& in) {
    auto r = grad_check_second_order(f, in, 1e-3, 1e-2);
    CHECK_MESSAGE(r.passed, name << ": " << r.summary());
  };
  check("conv+bn+lrelu",
        [](auto& v) { return leaky_relu(batchnorm2d(conv2d(v[0], v[1]), v[2], v[3]), 0.2); },
        {randn({2, 2, 4, 4}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng), randn({3}, rng)});
  check("linear+softmax+log", [](auto& v) { return log(softmax(linear(v[0], v[1], v[2]))); },
        {randn({3, 4}, rng), randn({5, 4}, rng), randn({5}, rng)});
  check("exp-div", [](auto& v) { return div(exp(v[0]), add_scalar(square(v[1]), 1.0)); }, {randn({3, 3}, rng), randn({3, 3}, rng)});
  check("upsample+conv", [](auto& v) { return square(conv2d(upsample_to(v[0], 5, 5), v[1])); },
        {randn({1, 2, 2, 2}, rng), randn({2, 2, 3, 3}, rng)});
}
