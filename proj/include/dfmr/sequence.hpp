#pragma once
// Acquisition timing for segmented inversion-recovery radial imaging, golden
// angle view ordering, delay binning, and spoke sample coordinates.
//
// Timing model: each segment starts with an inversion pulse, acquires
// spokes_per_segment readouts TR apart, then waits recovery_delay before the
// next inversion. Spoke j of a segment starts at t = segment_start + j*TR and
// its contrast-effective delay is tau = (j + 1/2)*TR (readout center). Both
// are computed in closed form, never by accumulation, so timing identities
// hold exactly in floating point.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dfmr/errors.hpp"

namespace dfmr {

struct SequenceTiming {
  int64_t n_segments = 8;
  int64_t spokes_per_segment = 100;
  double tr_ms = 35.2;
  double recovery_delay_ms = 500.0;

  int64_t total_spokes() const { return n_segments * spokes_per_segment; }
  // Readout window of one segment (the tau range spokes can take).
  double readout_window_ms() const {
    return static_cast<double>(spokes_per_segment) * tr_ms;
  }
  double segment_period_ms() const { return readout_window_ms() + recovery_delay_ms; }
};

enum class AngleMode { Golden, TinyGolden };

constexpr double kGoldenRatio = 1.6180339887498949;  // (1+sqrt(5))/2

// Increment between successive spokes; angles live modulo pi.
inline double golden_increment(AngleMode mode, int64_t tiny_n = 1) {
  if (tiny_n < 1) throw ConfigError("golden_increment: tiny index must be >= 1");
  double denom = mode == AngleMode::Golden
                     ? kGoldenRatio
                     : kGoldenRatio + static_cast<double>(tiny_n - 1);
  return M_PI / denom;
}

inline std::vector<double> golden_angles(int64_t n, AngleMode mode,
                                         int64_t tiny_n = 1) {
  if (n < 1) throw ConfigError("golden_angles: need n >= 1");
  double psi = golden_increment(mode, tiny_n);
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j)
    out[static_cast<size_t>(j)] = std::fmod(static_cast<double>(j) * psi, M_PI);
  return out;
}

struct SpokeInfo {
  int64_t global = 0;   // acquisition order index
  int64_t segment = 0;
  int64_t j = 0;        // index within the segment
  double tau_ms = 0.0;  // delay since the segment's inversion pulse
  double t_ms = 0.0;    // absolute start time from scan start
  double angle = 0.0;   // azimuthal angle in [0, pi)
};

inline std::vector<SpokeInfo> generate_schedule(const SequenceTiming& timing,
                                                AngleMode mode,
                                                int64_t tiny_n = 1) {
  if (timing.n_segments < 1 || timing.spokes_per_segment < 1 ||
      timing.tr_ms <= 0.0 || timing.recovery_delay_ms < 0.0)
    throw ConfigError("generate_schedule: invalid timing");
  std::vector<double> angles = golden_angles(timing.total_spokes(), mode, tiny_n);
  std::vector<SpokeInfo> out;
  out.reserve(static_cast<size_t>(timing.total_spokes()));
  for (int64_t s = 0; s < timing.n_segments; ++s)
    for (int64_t j = 0; j < timing.spokes_per_segment; ++j) {
      SpokeInfo sp;
      sp.global = s * timing.spokes_per_segment + j;
      sp.segment = s;
      sp.j = j;
      sp.tau_ms = (static_cast<double>(j) + 0.5) * timing.tr_ms;
      sp.t_ms = static_cast<double>(s) * timing.segment_period_ms() +
                static_cast<double>(j) * timing.tr_ms;
      sp.angle = angles[static_cast<size_t>(sp.global)];
      out.push_back(sp);
    }
  return out;
}

struct BinAssignment {
  int64_t n_bins = 0;
  std::vector<int> bin_of_spoke;   // one entry per scheduled spoke
  std::vector<double> rep_tau_ms;  // bin-center representative delay
  double window_ms = 0.0;          // binned tau range [0, window)
};

// Equal-width tau bins over one segment's readout window. Delay is periodic
// with the segment, so spokes with equal local index land in the same bin in
// every segment.
inline BinAssignment bin_by_delay(const std::vector<SpokeInfo>& schedule,
                                  int64_t n_bins, const SequenceTiming& timing) {
  if (n_bins < 1 || n_bins > timing.spokes_per_segment)
    throw ConfigError("bin_by_delay: n_bins must be in [1, spokes_per_segment]");
  BinAssignment out;
  out.n_bins = n_bins;
  out.window_ms = timing.readout_window_ms();
  double width = out.window_ms / static_cast<double>(n_bins);
  out.rep_tau_ms.resize(static_cast<size_t>(n_bins));
  for (int64_t b = 0; b < n_bins; ++b)
    out.rep_tau_ms[static_cast<size_t>(b)] = (static_cast<double>(b) + 0.5) * width;
  out.bin_of_spoke.reserve(schedule.size());
  for (const SpokeInfo& sp : schedule) {
    auto b = static_cast<int64_t>(std::floor(sp.tau_ms / width));
    if (b < 0) b = 0;
    if (b >= n_bins) b = n_bins - 1;
    out.bin_of_spoke.push_back(static_cast<int>(b));
  }
  return out;
}

// Sample coordinates along one spoke, in radians/pixel. Symmetric mode spans
// [-k_max, k_max] (odd counts include DC); center-out mode spans [0, k_max].
inline void spoke_coords(double angle, int64_t n_readout, double k_max,
                         bool center_out, std::vector<double>& kx,
                         std::vector<double>& ky) {
  if (n_readout < 2) throw ConfigError("spoke_coords: need >= 2 readout points");
  double ux = std::cos(angle), uy = std::sin(angle);
  kx.resize(static_cast<size_t>(n_readout));
  ky.resize(static_cast<size_t>(n_readout));
  for (int64_t i = 0; i < n_readout; ++i) {
    double r = center_out
                   ? k_max * static_cast<double>(i) / static_cast<double>(n_readout - 1)
                   : -k_max + 2.0 * k_max * static_cast<double>(i) /
                                  static_cast<double>(n_readout - 1);
    kx[static_cast<size_t>(i)] = r * ux;
    ky[static_cast<size_t>(i)] = r * uy;
  }
}

// Full Cartesian grid rows as "spokes": row r fixes ky, samples all kx. With
// these coordinates the adjoint is the exact inverse transform (times H*W),
// which the exactness tests rely on.
inline void cartesian_row_coords(int64_t h, int64_t w, int64_t row,
                                 std::vector<double>& kx, std::vector<double>& ky) {
  kx.resize(static_cast<size_t>(w));
  ky.resize(static_cast<size_t>(w));
  double kyv = 2.0 * M_PI * static_cast<double>(row - h / 2) / static_cast<double>(h);
  for (int64_t c = 0; c < w; ++c) {
    kx[static_cast<size_t>(c)] =
        2.0 * M_PI * static_cast<double>(c - w / 2) / static_cast<double>(w);
    ky[static_cast<size_t>(c)] = kyv;
  }
}

}  // namespace dfmr
