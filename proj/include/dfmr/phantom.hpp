#pragma once
// Digital tissue phantoms and the inversion-recovery signal law.
//
// A phantom is a label grid (0=background, 1=WM, 2=GM, 3=CSF) plus per-class
// (M0, T1). Geometry is a list of ellipses painted in order, later entries
// overwriting earlier ones; the default nests a CSF core inside a GM ring
// inside a WM ring. Ground truth is real-valued; all complexity enters later
// through coils, noise, and motion phase.
//
// Signal law: ideal single-inversion recovery s(tau) = M0*(1 - 2*exp(-tau/T1))
// with perfect inversion efficiency and no readout saturation, so every
// downstream check has a closed form. The null point sits at tau = T1*ln 2.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

struct TissueClass {
  double m0 = 0.0;
  double t1_ms = 1.0;
};

// Ellipse in normalized grid units: center and radii as fractions of the
// full grid extent.
struct Ellipse {
  double cx, cy, rx, ry;
  uint8_t label;
};

struct TissueMap {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> labels;            // h*w entries, values 0..3
  std::array<TissueClass, 4> classes{};   // [0] = background, m0 == 0

  uint8_t label_at(int64_t row, int64_t col) const {
    return labels[static_cast<size_t>(row * w + col)];
  }
};

// Defaults at 3T; configuration values, not measurements.
inline std::array<TissueClass, 4> default_tissues() {
  return {TissueClass{0.0, 1.0},      // background
          TissueClass{0.7, 850.0},    // WM
          TissueClass{0.8, 1400.0},   // GM
          TissueClass{1.0, 4000.0}};  // CSF
}

inline std::vector<Ellipse> default_geometry() {
  // Slightly off-center inner structures so the phantom has no accidental
  // symmetry that could hide orientation bugs.
  return {{0.50, 0.50, 0.42, 0.46, 1},
          {0.50, 0.49, 0.30, 0.34, 2},
          {0.51, 0.47, 0.16, 0.19, 3}};
}

inline TissueMap make_phantom(int64_t h, int64_t w,
                              const std::vector<Ellipse>& geometry = default_geometry(),
                              const std::array<TissueClass, 4>& classes = default_tissues()) {
  if (h < 16 || w < 16) throw ConfigError("make_phantom: size must be >= 16");
  if (classes[0].m0 != 0.0)
    throw ConfigError("make_phantom: background M0 must be 0");
  TissueMap map;
  map.h = h;
  map.w = w;
  map.classes = classes;
  map.labels.assign(static_cast<size_t>(h * w), 0);
  for (const Ellipse& e : geometry) {
    if (e.rx <= 0.0 || e.ry <= 0.0)
      throw ConfigError("make_phantom: degenerate ellipse (zero area)");
    if (e.label > 3) throw ConfigError("make_phantom: label out of range");
    int64_t painted = 0;
    for (int64_t row = 0; row < h; ++row)
      for (int64_t col = 0; col < w; ++col) {
        double x = (static_cast<double>(col) + 0.5) / static_cast<double>(w);
        double y = (static_cast<double>(row) + 0.5) / static_cast<double>(h);
        double u = (x - e.cx) / e.rx;
        double v = (y - e.cy) / e.ry;
        if (u * u + v * v <= 1.0) {
          map.labels[static_cast<size_t>(row * w + col)] = e.label;
          ++painted;
        }
      }
    if (painted == 0)
      throw ConfigError("make_phantom: ellipse covers no voxels");
  }
  return map;
}

inline double ir_signal(double m0, double t1_ms, double tau_ms) {
  if (t1_ms <= 0.0) throw ConfigError("ir_signal: T1 must be positive");
  if (tau_ms < 0.0) throw ConfigError("ir_signal: tau must be non-negative");
  return m0 * (1.0 - 2.0 * std::exp(-tau_ms / t1_ms));
}

// Magnetization image at one delay: complex [h, w] with zero imaginary
// part, matching what the encoding model consumes.
inline Tensor render(const TissueMap& map, double tau_ms) {
  Tensor img = Tensor::zeros_complex({map.h, map.w});
  // Per-class value computed once; voxels only index into it.
  std::array<double, 4> value{};
  for (size_t c = 1; c < 4; ++c)
    value[c] = ir_signal(map.classes[c].m0, map.classes[c].t1_ms, tau_ms);
  for (size_t i = 0; i < map.labels.size(); ++i)
    img.data[2 * i] = value[map.labels[i]];
  return img;
}

struct GroundTruthSeries {
  std::vector<double> delays_ms;  // strictly increasing
  std::vector<Tensor> images;     // complex [H,W], zero imaginary part
};

inline GroundTruthSeries render_series(const TissueMap& map,
                                       const std::vector<double>& delays_ms) {
  if (delays_ms.empty()) throw ConfigError("render_series: no delays");
  for (size_t i = 1; i < delays_ms.size(); ++i)
    if (delays_ms[i] <= delays_ms[i - 1])
      throw ConfigError("render_series: delays must be strictly increasing");
  GroundTruthSeries out;
  out.delays_ms = delays_ms;
  out.images.reserve(delays_ms.size());
  for (double tau : delays_ms) out.images.push_back(render(map, tau));
  return out;
}

}  // namespace dfmr
