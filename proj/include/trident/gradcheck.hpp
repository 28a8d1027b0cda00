#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trident/diff.hpp"

namespace trident {

struct GradCheckReport {
  bool passed = false;
  double worst_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;

  std::string summary() const;
};

using DiffFunction = std::function<Var(const std::vector<Var>&)>;

/// Compares reverse-mode gradients of fn against central differences.
///
/// Non-scalar outputs are reduced with a fixed pseudo-random weighting
/// (seeded by `seed`), so that ops with a constant plain sum such as softmax
/// still get a meaningful check. The relative error of an entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-2).
GradCheckReport grad_check(const DiffFunction& fn, const std::vector<NdArray>& inputs, double step = 1e-3,
                           double tol = 1e-3, std::uint64_t seed = 7);

/// Second-order check: differentiates h(x) = <w, grad f(x)> through the
/// recorded first gradient and compares against central differences of h.
GradCheckReport grad_check_second_order(const DiffFunction& fn, const std::vector<NdArray>& inputs,
                                        double step = 1e-3, double tol = 1e-2, std::uint64_t seed = 11);

double relative_error(double analytic, double numeric);

}  // namespace trident
