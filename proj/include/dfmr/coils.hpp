#pragma once
// Receive-coil sensitivity simulation: smooth low-order polynomial magnitude
// profiles times complex phase ramps, one lobe direction per coil. The
// magnitude is bounded away from zero by construction, so the sum-of-squares
// map is positive everywhere, not just on phantom support.

#include <cmath>
#include <cstdint>

#include "dfmr/errors.hpp"
#include "dfmr/rng.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

enum class CoilProfile { Poly, Uniform };

struct CoilSet {
  Tensor maps;  // complex [n_coils, H, W]

  int64_t count() const { return maps.rank() == 3 ? maps.size(0) : 0; }
  int64_t h() const { return maps.size(1); }
  int64_t w() const { return maps.size(2); }
};

inline CoilSet simulate_coils(int64_t n, int64_t h, int64_t w, uint64_t seed,
                              CoilProfile profile = CoilProfile::Poly) {
  if (n < 1) throw ConfigError("simulate_coils: need at least one coil");
  CoilSet set;
  set.maps = Tensor::zeros_complex({n, h, w});
  if (profile == CoilProfile::Uniform) {
    for (int64_t i = 0; i < n * h * w; ++i) set.maps.set_c(i, {1.0, 0.0});
    return set;
  }
  Rng rng = Rng(seed).substream("coils");
  for (int64_t c = 0; c < n; ++c) {
    double phi = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(n) +
                 0.1 * rng.normal();
    double lin = 0.35 * (1.0 + 0.1 * rng.normal());
    double quad = 0.15 * (1.0 + 0.1 * rng.normal());
    double ramp = 0.5 * (1.0 + 0.1 * rng.normal());
    double off = 0.3 * static_cast<double>(c) + 0.05 * rng.normal();
    double ux = std::cos(phi), uy = std::sin(phi);
    for (int64_t row = 0; row < h; ++row)
      for (int64_t col = 0; col < w; ++col) {
        // Normalized coordinates in [-1, 1].
        double x = 2.0 * (static_cast<double>(col) + 0.5) / static_cast<double>(w) - 1.0;
        double y = 2.0 * (static_cast<double>(row) + 0.5) / static_cast<double>(h) - 1.0;
        double d = x * ux + y * uy;
        double mag = 1.0 + lin * d + quad * d * d;
        double ph = ramp * (x * uy - y * ux) + off;
        set.maps.set_c((c * h + row) * w + col,
                       {mag * std::cos(ph), mag * std::sin(ph)});
      }
  }
  return set;
}

// Sum-of-squares magnitude map, real [H,W].
inline Tensor coil_sos(const CoilSet& set) {
  int64_t n = set.count(), hw = set.h() * set.w();
  Tensor out = Tensor::zeros_real({set.h(), set.w()});
  for (int64_t c = 0; c < n; ++c)
    for (int64_t i = 0; i < hw; ++i) {
      auto v = set.maps.c(c * hw + i);
      out.data[static_cast<size_t>(i)] += std::norm(v);
    }
  for (double& v : out.data) v = std::sqrt(v);
  return out;
}

}  // namespace dfmr
