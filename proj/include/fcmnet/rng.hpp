#pragma once

// Seedable generator with hand-rolled distributions. std::*_distribution is
// implementation-defined, which would break bitwise reproducibility of
// initialized parameters across toolchains, so the mapping from raw 64-bit
// draws to doubles lives here.

#include <cmath>
#include <cstdint>
#include <random>

#include "fcmnet/tensor.hpp"

namespace fcmnet {

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // pick in [0, n)
  int64_t index(int64_t n) { return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n)); }

 private:
  std::mt19937_64 gen_;
};

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Kaiming-uniform fan-in init: U(-b, b) with b = sqrt(6 / fan_in).
template <class T>
void kaiming_uniform_fill(Tensor4<T>& t, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void uniform_fill(Tensor4<T>& t, double lo, double hi, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace fcmnet
