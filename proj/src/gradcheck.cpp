#include "trident/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace trident {

namespace {

NdArray random_weights(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  NdArray w(shape);
  for (auto& v : w.data()) v = dist(rng);
  return w;
}

Var reduce_weighted(const Var& out, std::uint64_t seed) {
  if (out.size() == 1) return reshape(out, {});
  return sum(mul(out, constant(random_weights(out.shape(), seed))));
}

std::vector<Var> as_parameters(const std::vector<NdArray>& inputs) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& a : inputs) vars.push_back(parameter(a));
  return vars;
}

template <class Scalar, class Analytic>
GradCheckReport compare(const std::vector<NdArray>& inputs, double step, double tol, Scalar&& scalar_at,
                        Analytic&& analytic) {
  GradCheckReport report;
  report.passed = true;
  std::vector<NdArray> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = probe[t][i];
      probe[t][i] = saved + step;
      const double up = scalar_at(probe);
      probe[t][i] = saved - step;
      const double down = scalar_at(probe);
      probe[t][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double err = relative_error(a, numeric);
      ++report.checked;
      if (err > report.worst_rel_error || report.checked == 1) {
        report.worst_rel_error = err;
        report.worst_input = t;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.worst_rel_error <= tol;
  return report;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " worst rel err " << worst_rel_error << " at input " << worst_input << "["
     << worst_index << "] analytic " << analytic << " numeric " << numeric << " (" << checked << " entries)";
  return os.str();
}

GradCheckReport grad_check(const DiffFunction& fn, const std::vector<NdArray>& inputs, double step, double tol,
                           std::uint64_t seed) {
  auto vars = as_parameters(inputs);
  const Var out = reduce_weighted(fn(vars), seed);
  const auto grads = grad(out, vars, false);
  std::vector<NdArray> analytic;
  for (const auto& g : grads) analytic.push_back(g.value());

  auto scalar_at = [&](const std::vector<NdArray>& x) {
    NoGradGuard no_grad;
    std::vector<Var> cs;
    for (const auto& a : x) cs.push_back(constant(a));
    return reduce_weighted(fn(cs), seed).item();
  };
  return compare(inputs, step, tol, scalar_at, analytic);
}

GradCheckReport grad_check_second_order(const DiffFunction& fn, const std::vector<NdArray>& inputs, double step,
                                        double tol, std::uint64_t seed) {
  // h(x) = sum_t <w_t, d f / d x_t>
  auto first_order_h = [&](const std::vector<Var>& vars, bool create_graph) {
    const Var out = reduce_weighted(fn(vars), seed);
    const auto grads = grad(out, vars, create_graph);
    Var h;
    for (std::size_t t = 0; t < grads.size(); ++t) {
      Var term = sum(mul(grads[t], constant(random_weights(grads[t].shape(), seed + 1 + t))));
      h = h.defined() ? add(h, term) : term;
    }
    return h;
  };

  auto vars = as_parameters(inputs);
  const Var h = first_order_h(vars, true);
  const auto second = grad(h, vars, false);
  std::vector<NdArray> analytic;
  for (const auto& g : second) analytic.push_back(g.value());

  auto scalar_at = [&](const std::vector<NdArray>& x) { return first_order_h(as_parameters(x), false).item(); };
  return compare(inputs, step, tol, scalar_at, analytic);
}

}  // namespace trident
