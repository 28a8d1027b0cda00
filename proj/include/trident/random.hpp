#pragma once

#include <cstdint>
#include <random>

#include "trident/ndarray.hpp"

namespace trident {

using Rng = std::mt19937_64;

/// Standard-normal draws.
NdArray normal_array(const Shape& shape, Rng& rng);
/// Uniform draws in [-bound, bound].
NdArray uniform_array(const Shape& shape, double bound, Rng& rng);

/// Derive an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace trident
