#include "trident/random.hpp"

namespace trident {

NdArray normal_array(const Shape& shape, Rng& rng) {
  NdArray a(shape);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : a.data()) v = dist(rng);
  return a;
}

NdArray uniform_array(const Shape& shape, double bound, Rng& rng) {
  NdArray a(shape);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : a.data()) v = dist(rng);
  return a;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace trident
