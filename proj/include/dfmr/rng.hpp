#pragma once
// Deterministic random streams and byte hashing.
//
// mt19937_64 has a sequence fixed by the standard, so a fixed seed reproduces
// bit-identical draws on every platform. Gaussians come from an explicit
// Box-Muller transform because std::normal_distribution's output is
// implementation-defined. Named substreams derive their seed from the parent
// seed and the stream name, so draw order in one stream never shifts another.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "dfmr/tensor.hpp"

namespace dfmr {

inline uint64_t fnv1a64(const void* p, size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  // Independent child stream identified by name. Derived from the parent
  // seed, not the generator state, so creation order does not matter.
  Rng substream(std::string_view name) const {
    return Rng(splitmix64(seed_ ^ fnv1a64(name)));
  }

  uint64_t raw() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // keep log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(Tensor& t, double stddev = 1.0) {
    for (double& v : t.data) v = stddev * normal();
  }

  void fill_uniform(Tensor& t, double lo = 0.0, double hi = 1.0) {
    for (double& v : t.data) v = lo + (hi - lo) * uniform();
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Order-insensitive content hash of a tensor (layout plus raw payload bytes).
inline uint64_t fingerprint(const Tensor& t) {
  uint64_t h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int64_t));
  h ^= splitmix64(static_cast<uint64_t>(t.dtype) + 0x9e37);
  if (!t.data.empty())
    h = splitmix64(h ^ fnv1a64(t.data.data(), t.data.size() * sizeof(double)));
  return h;
}

}  // namespace dfmr
