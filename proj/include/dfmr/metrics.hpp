#pragma once
// Reconstruction quality measures. All reconstructions here are defined up
// to a global complex scale (coil maps absorb one, the data term another),
// so errors are measured after a least-squares scale fit: the reported
// number is min_alpha ||alpha * recon - truth|| / ||truth||.

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/phantom.hpp"
#include "dfmr/sequence.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

// Scale-invariant normalized RMSE between complex tensors of equal layout.
// A zero reconstruction scores exactly 1 (nothing explained).
inline double nrmse(const Tensor& recon, const Tensor& truth) {
  if (!recon.same_layout(truth) || !recon.is_complex())
    throw NumericError("nrmse: complex tensors of equal shape expected");
  std::complex<double> cross(0.0, 0.0);
  double rr = 0.0, tt = 0.0;
  for (int64_t i = 0; i < recon.numel(); ++i) {
    std::complex<double> r = recon.c(i), t = truth.c(i);
    cross += t * std::conj(r);
    rr += std::norm(r);
    tt += std::norm(t);
  }
  if (tt <= 0.0) throw NumericError("nrmse: reference has zero norm");
  if (rr <= 0.0) return 1.0;
  std::complex<double> alpha = cross / rr;
  double err = 0.0;
  for (int64_t i = 0; i < recon.numel(); ++i)
    err += std::norm(alpha * recon.c(i) - truth.c(i));
  return std::sqrt(err / tt);
}

struct BinMetric {
  int64_t bin = 0;
  double tau_ms = 0.0;
  double nrmse = 0.0;
};

// Per-bin errors of a [n_bins, h, w] series against same-shaped truth.
// The scale fit is done per bin, matching how single images are scored.
inline std::vector<BinMetric> series_nrmse(const Tensor& recon,
                                           const Tensor& truth,
                                           const BinAssignment& bins) {
  if (!recon.same_layout(truth) || recon.rank() != 3 ||
      recon.size(0) != bins.n_bins)
    throw NumericError("series_nrmse: series shape mismatch");
  int64_t nb = bins.n_bins, hw = recon.size(1) * recon.size(2);
  std::vector<BinMetric> out;
  out.reserve(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b) {
    Tensor r = Tensor::zeros_complex({recon.size(1), recon.size(2)});
    Tensor t = r;
    for (int64_t i = 0; i < 2 * hw; ++i) {
      r.data[static_cast<size_t>(i)] =
          recon.data[static_cast<size_t>(2 * b * hw + i)];
      t.data[static_cast<size_t>(i)] =
          truth.data[static_cast<size_t>(2 * b * hw + i)];
    }
    out.push_back({b, bins.rep_tau_ms[static_cast<size_t>(b)], nrmse(r, t)});
  }
  return out;
}

inline double mean_nrmse(const std::vector<BinMetric>& ms) {
  if (ms.empty()) throw NumericError("mean_nrmse: empty metric list");
  double s = 0.0;
  for (const BinMetric& m : ms) s += m.nrmse;
  return s / static_cast<double>(ms.size());
}

// Mean magnitude of one bin image over all voxels of a tissue label; the
// null-detection probe (is this tissue actually dark where it should be?).
inline double mean_abs_over_label(const Tensor& series, int64_t bin,
                                  const TissueMap& map, uint8_t label) {
  if (series.rank() != 3 || !series.is_complex() || series.size(1) != map.h ||
      series.size(2) != map.w)
    throw NumericError("mean_abs_over_label: series does not match map");
  if (bin < 0 || bin >= series.size(0))
    throw NumericError("mean_abs_over_label: bin out of range");
  int64_t hw = map.h * map.w;
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i < hw; ++i) {
    if (map.labels[static_cast<size_t>(i)] != label) continue;
    sum += std::abs(series.c(bin * hw + i));
    count += 1;
  }
  if (count == 0)
    throw NumericError("mean_abs_over_label: label absent from map");
  return sum / static_cast<double>(count);
}

struct CurvePoint {
  std::string voxel;  // "rowxcol"
  int label = 0;
  double tau_ms = 0.0;
  double value = 0.0;
};

// Signed recovery curves for chosen voxels. The reconstruction's arbitrary
// global phase is removed per voxel using the largest-delay bin, where the
// true signal is most recovered and positive; the signed value is the
// projection onto that direction.
inline std::vector<CurvePoint> extract_curves(
    const Tensor& series, const BinAssignment& bins, const TissueMap& map,
    const std::vector<std::pair<int64_t, int64_t>>& voxels) {
  if (series.rank() != 3 || !series.is_complex() || series.size(1) != map.h ||
      series.size(2) != map.w || series.size(0) != bins.n_bins)
    throw NumericError("extract_curves: series shape mismatch");
  int64_t nb = bins.n_bins, hw = map.h * map.w;
  std::vector<CurvePoint> out;
  for (auto [row, col] : voxels) {
    if (row < 0 || row >= map.h || col < 0 || col >= map.w)
      throw ConfigError("extract_curves: voxel outside the grid");
    int64_t p = row * map.w + col;
    std::complex<double> ref = series.c((nb - 1) * hw + p);
    std::complex<double> dir =
        std::abs(ref) > 0.0 ? ref / std::abs(ref) : std::complex<double>(1.0);
    std::string name = std::to_string(row) + "x" + std::to_string(col);
    int label = static_cast<int>(map.labels[static_cast<size_t>(p)]);
    for (int64_t b = 0; b < nb; ++b) {
      double value = (series.c(b * hw + p) * std::conj(dir)).real();
      out.push_back(
          {name, label, bins.rep_tau_ms[static_cast<size_t>(b)], value});
    }
  }
  return out;
}

// One representative interior voxel per non-background tissue: the voxel of
// that label closest to the label's centroid (stable, geometry-derived).
inline std::vector<std::pair<int64_t, int64_t>> representative_voxels(
    const TissueMap& map) {
  std::vector<std::pair<int64_t, int64_t>> out;
  for (uint8_t label = 1; label <= 3; ++label) {
    double cy = 0.0, cx = 0.0;
    int64_t n = 0;
    for (int64_t row = 0; row < map.h; ++row)
      for (int64_t col = 0; col < map.w; ++col)
        if (map.label_at(row, col) == label) {
          cy += static_cast<double>(row);
          cx += static_cast<double>(col);
          n += 1;
        }
    if (n == 0) continue;
    cy /= static_cast<double>(n);
    cx /= static_cast<double>(n);
    double best = 1e300;
    std::pair<int64_t, int64_t> pick{0, 0};
    for (int64_t row = 0; row < map.h; ++row)
      for (int64_t col = 0; col < map.w; ++col) {
        if (map.label_at(row, col) != label) continue;
        double d = std::hypot(static_cast<double>(row) - cy,
                              static_cast<double>(col) - cx);
        if (d < best) {
          best = d;
          pick = {row, col};
        }
      }
    out.push_back(pick);
  }
  return out;
}

}  // namespace dfmr
