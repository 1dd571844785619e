#pragma once
// Non-uniform DFT encoding model.
//
// Forward model for one sample j of coil c:
//   y[c][j] = phase_j * sum_r s_c(r) * rho(r) * exp(-i k'_j . r)
// where r runs over the centered integer pixel grid (x = col - w/2,
// y = row - h/2), k'_j is the (optionally motion-rotated) k-space location in
// radians/pixel, and phase_j the motion translation phase exp(-i k'_j . d).
//
// All transforms here are exact sums evaluated separably: the 2D phase factor
// splits into a per-column and a per-row table, so one sample costs
// O(h*w) multiply-adds with O(h + w) table entries instead of O(h*w)
// trig calls. Kernels work on split re/im arrays (structure of arrays) to
// vectorize; Tensor-facing wrappers convert at the boundary.

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dfmr/coils.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/linalg.hpp"
#include "dfmr/phantom.hpp"
#include "dfmr/rng.hpp"
#include "dfmr/sequence.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

// ---------------------------------------------------------------------------
// Split-complex helpers
// ---------------------------------------------------------------------------

inline void split_complex(const Tensor& t, std::vector<double>& re,
                          std::vector<double>& im) {
  if (!t.is_complex())
    throw NumericError("split_complex: complex tensor expected");
  int64_t n = t.numel();
  re.resize(static_cast<size_t>(n));
  im.resize(static_cast<size_t>(n));
  const double* d = t.data.data();
  for (int64_t i = 0; i < n; ++i) {
    re[static_cast<size_t>(i)] = d[2 * i];
    im[static_cast<size_t>(i)] = d[2 * i + 1];
  }
}

inline void merge_complex(const std::vector<double>& re,
                          const std::vector<double>& im, Tensor& t) {
  int64_t n = t.numel();
  if (!t.is_complex() || static_cast<size_t>(n) != re.size() ||
      re.size() != im.size())
    throw NumericError("merge_complex: layout mismatch");
  double* d = t.data.data();
  for (int64_t i = 0; i < n; ++i) {
    d[2 * i] = re[static_cast<size_t>(i)];
    d[2 * i + 1] = im[static_cast<size_t>(i)];
  }
}

// ---------------------------------------------------------------------------
// Separable NUDFT kernels (split re/im arrays)
// ---------------------------------------------------------------------------

namespace kern {

// Per-sample axis phase tables:
//   ex[j*w + col] = exp(-i * kx_j * (col - w/2))
//   ey[j*h + row] = exp(-i * ky_j * (row - h/2))
struct PhaseTables {
  int64_t m = 0, h = 0, w = 0;
  std::vector<double> exr, exi, eyr, eyi;
};

inline void build_phase_tables(const double* kx, const double* ky, int64_t m,
                               int64_t h, int64_t w, PhaseTables& pt) {
  pt.m = m;
  pt.h = h;
  pt.w = w;
  pt.exr.resize(static_cast<size_t>(m * w));
  pt.exi.resize(static_cast<size_t>(m * w));
  pt.eyr.resize(static_cast<size_t>(m * h));
  pt.eyi.resize(static_cast<size_t>(m * h));
  for (int64_t j = 0; j < m; ++j) {
    double* exr = pt.exr.data() + j * w;
    double* exi = pt.exi.data() + j * w;
    for (int64_t col = 0; col < w; ++col) {
      // Integer centering (col - floor(w/2)) keeps pixel coordinates on the
      // integer lattice for odd sizes too, which the Toeplitz path and the
      // Cartesian exact-inverse identities rely on.
      double ang = -kx[j] * static_cast<double>(col - w / 2);
      exr[col] = std::cos(ang);
      exi[col] = std::sin(ang);
    }
    double* eyr = pt.eyr.data() + j * h;
    double* eyi = pt.eyi.data() + j * h;
    for (int64_t row = 0; row < h; ++row) {
      double ang = -ky[j] * static_cast<double>(row - h / 2);
      eyr[row] = std::cos(ang);
      eyi[row] = std::sin(ang);
    }
  }
}

// y_j = sum_r w(r) exp(-i k_j . r), evaluated row by row:
// t(row) = sum_col w(row,col)*ex(col); y_j = sum_row t(row)*ey(row).
inline void forward(const double* wre, const double* wim,
                    const PhaseTables& pt, double* yre, double* yim) {
  const int64_t m = pt.m, h = pt.h, w = pt.w;
  for (int64_t j = 0; j < m; ++j) {
    const double* exr = pt.exr.data() + j * w;
    const double* exi = pt.exi.data() + j * w;
    const double* eyr = pt.eyr.data() + j * h;
    const double* eyi = pt.eyi.data() + j * h;
    double acc_re = 0.0, acc_im = 0.0;
    for (int64_t row = 0; row < h; ++row) {
      const double* wr = wre + row * w;
      const double* wi = wim + row * w;
      double tr = 0.0, ti = 0.0;
#pragma omp simd reduction(+ : tr, ti)
      for (int64_t col = 0; col < w; ++col) {
        tr += wr[col] * exr[col] - wi[col] * exi[col];
        ti += wr[col] * exi[col] + wi[col] * exr[col];
      }
      acc_re += tr * eyr[row] - ti * eyi[row];
      acc_im += tr * eyi[row] + ti * eyr[row];
    }
    yre[j] = acc_re;
    yim[j] = acc_im;
  }
}

// Forward plus per-sample coordinate derivatives of the unphased transform:
//   fx_j = d y_j / d kx_j = sum_r w(r) * (-i x) * exp(-i k_j . r)
//   fy_j = d y_j / d ky_j = sum_r w(r) * (-i y) * exp(-i k_j . r)
inline void forward_coordgrad(const double* wre, const double* wim,
                              const PhaseTables& pt, double* yre, double* yim,
                              double* fxre, double* fxim, double* fyre,
                              double* fyim) {
  const int64_t m = pt.m, h = pt.h, w = pt.w;
  for (int64_t j = 0; j < m; ++j) {
    const double* exr = pt.exr.data() + j * w;
    const double* exi = pt.exi.data() + j * w;
    const double* eyr = pt.eyr.data() + j * h;
    const double* eyi = pt.eyi.data() + j * h;
    double acc_re = 0.0, acc_im = 0.0;
    double ax_re = 0.0, ax_im = 0.0;  // sum_r w*x*e, multiplied by -i below
    double ay_re = 0.0, ay_im = 0.0;  // sum_r w*y*e, multiplied by -i below
    for (int64_t row = 0; row < h; ++row) {
      const double* wr = wre + row * w;
      const double* wi = wim + row * w;
      double tr = 0.0, ti = 0.0, txr = 0.0, txi = 0.0;
#pragma omp simd reduction(+ : tr, ti, txr, txi)
      for (int64_t col = 0; col < w; ++col) {
        double x = static_cast<double>(col - w / 2);
        double er = exr[col], ei = exi[col];
        double pr = wr[col] * er - wi[col] * ei;
        double pi = wr[col] * ei + wi[col] * er;
        tr += pr;
        ti += pi;
        txr += x * pr;
        txi += x * pi;
      }
      double y = static_cast<double>(row - h / 2);
      double rr = eyr[row], ri = eyi[row];
      acc_re += tr * rr - ti * ri;
      acc_im += tr * ri + ti * rr;
      ax_re += txr * rr - txi * ri;
      ax_im += txr * ri + txi * rr;
      ay_re += y * (tr * rr - ti * ri);
      ay_im += y * (tr * ri + ti * rr);
    }
    yre[j] = acc_re;
    yim[j] = acc_im;
    fxre[j] = ax_im;  // -i * (a_re + i a_im) = a_im - i a_re
    fxim[j] = -ax_re;
    fyre[j] = ay_im;
    fyim[j] = -ay_re;
  }
}

// x(r) += sum_j z_j exp(+i k_j . r). Accumulates into xre/xim (caller zeroes
// or composes). Conjugated tables are formed inline, so one table build
// serves both directions.
inline void adjoint_accumulate(const double* zre, const double* zim,
                               const PhaseTables& pt, double* xre,
                               double* xim) {
  const int64_t m = pt.m, h = pt.h, w = pt.w;
  for (int64_t j = 0; j < m; ++j) {
    const double* exr = pt.exr.data() + j * w;
    const double* exi = pt.exi.data() + j * w;
    const double* eyr = pt.eyr.data() + j * h;
    const double* eyi = pt.eyi.data() + j * h;
    double zr = zre[j], zi = zim[j];
    for (int64_t row = 0; row < h; ++row) {
      // f = z_j * conj(ey(row))
      double fr = zr * eyr[row] + zi * eyi[row];
      double fi = zi * eyr[row] - zr * eyi[row];
      double* xr = xre + row * w;
      double* xi = xim + row * w;
#pragma omp simd
      for (int64_t col = 0; col < w; ++col) {
        xr[col] += fr * exr[col] + fi * exi[col];
        xi[col] += fi * exr[col] - fr * exi[col];
      }
    }
  }
}

}  // namespace kern

// ---------------------------------------------------------------------------
// Rigid motion
// ---------------------------------------------------------------------------

// Per-segment rigid motion state. Rotation is counterclockwise in radians;
// translation is in pixels. The k-space effect of segment state (nu, d):
//   k' = R(nu) k,   y -> exp(-i k' . d) * y(k')
// which corresponds to observing the image rotated by -nu and shifted.
struct MotionTrack {
  std::vector<double> nu_rad;  // [n_segments]
  std::vector<double> delta;   // [n_segments * 2], (dx, dy) per segment

  int64_t segments() const { return static_cast<int64_t>(nu_rad.size()); }

  static MotionTrack zero(int64_t n_segments) {
    MotionTrack t;
    t.nu_rad.assign(static_cast<size_t>(n_segments), 0.0);
    t.delta.assign(static_cast<size_t>(n_segments) * 2, 0.0);
    return t;
  }
};

// Gauge fixing: absolute motion is identifiable only relative to a reference
// segment, since a global rigid transform can be absorbed into the image.
// Expressing segment s relative to segment 0:
//   nu_rel[s] = nu[s] - nu[0]
//   d_rel[s]  = R(-nu[0]) (d[s] - d[0])
// A track in this gauge plus the segment-0 transform of the image reproduces
// the same data as the original track.
inline MotionTrack relative_to_first(const MotionTrack& t) {
  MotionTrack out = t;
  if (t.segments() == 0) return out;
  double nu0 = t.nu_rad[0];
  double dx0 = t.delta[0], dy0 = t.delta[1];
  double c = std::cos(-nu0), s = std::sin(-nu0);
  for (int64_t i = 0; i < t.segments(); ++i) {
    out.nu_rad[static_cast<size_t>(i)] = t.nu_rad[static_cast<size_t>(i)] - nu0;
    double ux = t.delta[static_cast<size_t>(2 * i)] - dx0;
    double uy = t.delta[static_cast<size_t>(2 * i + 1)] - dy0;
    out.delta[static_cast<size_t>(2 * i)] = c * ux - s * uy;
    out.delta[static_cast<size_t>(2 * i + 1)] = s * ux + c * uy;
  }
  return out;
}

// Motion-transformed sample coordinates plus the translation phase factor.
struct PhasedCoords {
  std::vector<double> kx, ky;      // rotated coordinates
  std::vector<double> phre, phim;  // exp(-i k' . d) per sample
};

inline PhasedCoords apply_motion(const std::vector<double>& kx,
                                 const std::vector<double>& ky, double nu_rad,
                                 double dx, double dy) {
  if (kx.size() != ky.size())
    throw NumericError("apply_motion: coordinate arrays differ in length");
  size_t m = kx.size();
  PhasedCoords out;
  out.kx.resize(m);
  out.ky.resize(m);
  out.phre.resize(m);
  out.phim.resize(m);
  double c = std::cos(nu_rad), s = std::sin(nu_rad);
  for (size_t j = 0; j < m; ++j) {
    double rx = c * kx[j] - s * ky[j];
    double ry = s * kx[j] + c * ky[j];
    out.kx[j] = rx;
    out.ky[j] = ry;
    double ang = -(rx * dx + ry * dy);
    out.phre[j] = std::cos(ang);
    out.phim[j] = std::sin(ang);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Acquisition description and dataset container
// ---------------------------------------------------------------------------

struct AcquisitionSpec {
  SequenceTiming timing;
  AngleMode angle_mode = AngleMode::Golden;
  int64_t tiny_n = 1;
  int64_t n_readout = 101;
  double k_max = M_PI;
  bool center_out = false;   // ignored for Cartesian rows
  bool cartesian = false;    // rows of a Cartesian grid instead of spokes
  int64_t cartesian_h = 0;   // grid height, required when cartesian
};

// Simulated (or loaded) multi-coil k-space data. Coordinates are always the
// nominal ones the scanner commanded; subject motion is never recorded here,
// reconstruction has to infer it.
struct KSpaceDataset {
  SequenceTiming timing;
  std::vector<SpokeInfo> schedule;
  int64_t n_coils = 0;
  int64_t n_readout = 0;
  bool cartesian = false;
  Tensor coords;   // real [n_spokes, n_readout, 2], (kx, ky)
  Tensor samples;  // complex [n_spokes, n_coils, n_readout]
  double noise_sigma = 0.0;   // per complex sample
  double noise_energy = 0.0;  // realized sum |n|^2 over all samples

  int64_t n_spokes() const { return static_cast<int64_t>(schedule.size()); }
  int64_t samples_per_spoke() const { return n_readout; }
};

// Nominal trajectory for a schedule: radial spokes at the scheduled angles,
// or rows of a Cartesian grid taken in spoke order (wrapping if the schedule
// has more spokes than rows).
inline Tensor build_trajectory(const std::vector<SpokeInfo>& schedule,
                               const AcquisitionSpec& acq) {
  int64_t n_spokes = static_cast<int64_t>(schedule.size());
  int64_t nr = acq.n_readout;
  if (acq.cartesian) {
    if (acq.cartesian_h < 2)
      throw ConfigError("build_trajectory: cartesian_h must be >= 2");
  }
  Tensor coords = Tensor::zeros_real({n_spokes, nr, 2});
  std::vector<double> kx(static_cast<size_t>(nr)),
      ky(static_cast<size_t>(nr));
  for (int64_t sp = 0; sp < n_spokes; ++sp) {
    const SpokeInfo& info = schedule[static_cast<size_t>(sp)];
    if (acq.cartesian) {
      int64_t row = info.global % acq.cartesian_h;
      cartesian_row_coords(acq.cartesian_h, nr, row, kx, ky);
    } else {
      spoke_coords(info.angle, nr, acq.k_max, acq.center_out, kx, ky);
    }
    for (int64_t i = 0; i < nr; ++i) {
      double* d = coords.data.data() + (sp * nr + i) * 2;
      d[0] = kx[static_cast<size_t>(i)];
      d[1] = ky[static_cast<size_t>(i)];
    }
  }
  return coords;
}

// All samples of one temporal bin flattened into sample-major arrays.
struct FlatBin {
  int64_t m = 0;                 // samples in the bin
  int64_t n_coils = 0;
  std::vector<double> kx, ky;    // nominal coordinates, [m]
  std::vector<int32_t> segment;  // acquisition segment per sample, [m]
  std::vector<double> yre, yim;  // observed samples, coil-major [n_coils * m]
};

inline FlatBin collect_bin(const KSpaceDataset& ds, const BinAssignment& bins,
                           int64_t b) {
  if (b < 0 || b >= bins.n_bins)
    throw ConfigError("collect_bin: bin index out of range");
  if (static_cast<int64_t>(bins.bin_of_spoke.size()) != ds.n_spokes())
    throw ConfigError("collect_bin: bin assignment does not match dataset");
  FlatBin fb;
  fb.n_coils = ds.n_coils;
  int64_t nr = ds.n_readout;
  std::vector<int64_t> spokes;
  for (int64_t sp = 0; sp < ds.n_spokes(); ++sp)
    if (bins.bin_of_spoke[static_cast<size_t>(sp)] == b) spokes.push_back(sp);
  fb.m = static_cast<int64_t>(spokes.size()) * nr;
  fb.kx.resize(static_cast<size_t>(fb.m));
  fb.ky.resize(static_cast<size_t>(fb.m));
  fb.segment.resize(static_cast<size_t>(fb.m));
  fb.yre.resize(static_cast<size_t>(ds.n_coils * fb.m));
  fb.yim.resize(static_cast<size_t>(ds.n_coils * fb.m));
  int64_t at = 0;
  for (int64_t sp : spokes) {
    const SpokeInfo& info = ds.schedule[static_cast<size_t>(sp)];
    for (int64_t i = 0; i < nr; ++i, ++at) {
      const double* d = ds.coords.data.data() + (sp * nr + i) * 2;
      fb.kx[static_cast<size_t>(at)] = d[0];
      fb.ky[static_cast<size_t>(at)] = d[1];
      fb.segment[static_cast<size_t>(at)] = static_cast<int32_t>(info.segment);
      for (int64_t c = 0; c < ds.n_coils; ++c) {
        std::complex<double> v = ds.samples.c((sp * ds.n_coils + c) * nr + i);
        fb.yre[static_cast<size_t>(c * fb.m + at)] = v.real();
        fb.yim[static_cast<size_t>(c * fb.m + at)] = v.imag();
      }
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Tensor-level transforms (single image plane)
// ---------------------------------------------------------------------------

// y_j = phase_j * sum_r rho(r) exp(-i k_j . r); rho complex [h, w].
inline Tensor nudft_forward_single(const Tensor& rho,
                                   const std::vector<double>& kx,
                                   const std::vector<double>& ky,
                                   const double* phre = nullptr,
                                   const double* phim = nullptr) {
  if (rho.rank() != 2 || !rho.is_complex())
    throw NumericError("nudft_forward_single: complex [h,w] image expected");
  if (kx.size() != ky.size())
    throw NumericError("nudft_forward_single: coordinate length mismatch");
  int64_t h = rho.size(0), w = rho.size(1);
  int64_t m = static_cast<int64_t>(kx.size());
  std::vector<double> wre, wim;
  split_complex(rho, wre, wim);
  kern::PhaseTables pt;
  kern::build_phase_tables(kx.data(), ky.data(), m, h, w, pt);
  std::vector<double> yre(static_cast<size_t>(m)),
      yim(static_cast<size_t>(m));
  kern::forward(wre.data(), wim.data(), pt, yre.data(), yim.data());
  Tensor out = Tensor::zeros_complex({m});
  for (int64_t j = 0; j < m; ++j) {
    double re = yre[static_cast<size_t>(j)], im = yim[static_cast<size_t>(j)];
    if (phre) {
      double pr = phre[j], pi = phim[j];
      out.set_c(j, {re * pr - im * pi, re * pi + im * pr});
    } else {
      out.set_c(j, {re, im});
    }
  }
  return out;
}

// x(r) = sum_j dcf_j * conj(phase_j) * y_j * exp(+i k_j . r) as [h, w].
inline Tensor nudft_adjoint_single(const Tensor& y,
                                   const std::vector<double>& kx,
                                   const std::vector<double>& ky, int64_t h,
                                   int64_t w, const double* dcf = nullptr,
                                   const double* phre = nullptr,
                                   const double* phim = nullptr) {
  if (y.rank() != 1 || !y.is_complex())
    throw NumericError("nudft_adjoint_single: complex [m] samples expected");
  int64_t m = y.size(0);
  if (kx.size() != static_cast<size_t>(m) || ky.size() != kx.size())
    throw NumericError("nudft_adjoint_single: coordinate length mismatch");
  std::vector<double> zre(static_cast<size_t>(m)),
      zim(static_cast<size_t>(m));
  for (int64_t j = 0; j < m; ++j) {
    std::complex<double> v = y.c(j);
    if (phre) {
      // conj(phase_j) undoes the forward translation phase
      std::complex<double> p(phre[j], -phim[j]);
      v *= p;
    }
    if (dcf) v *= dcf[j];
    zre[static_cast<size_t>(j)] = v.real();
    zim[static_cast<size_t>(j)] = v.imag();
  }
  kern::PhaseTables pt;
  kern::build_phase_tables(kx.data(), ky.data(), m, h, w, pt);
  std::vector<double> xre(static_cast<size_t>(h * w), 0.0),
      xim(static_cast<size_t>(h * w), 0.0);
  kern::adjoint_accumulate(zre.data(), zim.data(), pt, xre.data(), xim.data());
  Tensor out = Tensor::zeros_complex({h, w});
  merge_complex(xre, xim, out);
  return out;
}

// Multi-coil forward: out[c][j] = phase_j * sum_r s_c(r) rho(r) e^{-i k_j.r}.
// Phase tables are built once and shared across coils.
inline Tensor nudft_forward_coils(const Tensor& rho, const CoilSet& coils,
                                  const std::vector<double>& kx,
                                  const std::vector<double>& ky,
                                  const double* phre = nullptr,
                                  const double* phim = nullptr) {
  if (rho.rank() != 2 || !rho.is_complex())
    throw NumericError("nudft_forward_coils: complex [h,w] image expected");
  int64_t h = rho.size(0), w = rho.size(1);
  if (coils.h() != h || coils.w() != w)
    throw ConfigError("nudft_forward_coils: coil maps do not match image");
  int64_t m = static_cast<int64_t>(kx.size());
  int64_t nc = coils.count();
  kern::PhaseTables pt;
  kern::build_phase_tables(kx.data(), ky.data(), m, h, w, pt);
  std::vector<double> wre(static_cast<size_t>(h * w)),
      wim(static_cast<size_t>(h * w));
  std::vector<double> yre(static_cast<size_t>(m)),
      yim(static_cast<size_t>(m));
  Tensor out = Tensor::zeros_complex({nc, m});
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t i = 0; i < h * w; ++i) {
      std::complex<double> p = rho.c(i) * coils.maps.c(c * h * w + i);
      wre[static_cast<size_t>(i)] = p.real();
      wim[static_cast<size_t>(i)] = p.imag();
    }
    kern::forward(wre.data(), wim.data(), pt, yre.data(), yim.data());
    for (int64_t j = 0; j < m; ++j) {
      std::complex<double> v(yre[static_cast<size_t>(j)],
                             yim[static_cast<size_t>(j)]);
      if (phre) v *= std::complex<double>(phre[j], phim[j]);
      out.set_c(c * m + j, v);
    }
  }
  return out;
}

// Multi-coil adjoint: x(r) = sum_c conj(s_c(r)) sum_j dcf_j conj(phase_j)
// y[c][j] e^{+i k_j.r}.
inline Tensor nudft_adjoint_coils(const Tensor& y, const CoilSet& coils,
                                  const std::vector<double>& kx,
                                  const std::vector<double>& ky,
                                  const double* dcf = nullptr,
                                  const double* phre = nullptr,
                                  const double* phim = nullptr) {
  if (y.rank() != 2 || !y.is_complex())
    throw NumericError("nudft_adjoint_coils: complex [c,m] samples expected");
  int64_t nc = y.size(0), m = y.size(1);
  if (coils.count() != nc)
    throw ConfigError("nudft_adjoint_coils: coil count mismatch");
  int64_t h = coils.h(), w = coils.w();
  kern::PhaseTables pt;
  kern::build_phase_tables(kx.data(), ky.data(), m, h, w, pt);
  std::vector<double> zre(static_cast<size_t>(m)),
      zim(static_cast<size_t>(m));
  std::vector<double> xre(static_cast<size_t>(h * w)),
      xim(static_cast<size_t>(h * w));
  Tensor out = Tensor::zeros_complex({h, w});
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t j = 0; j < m; ++j) {
      std::complex<double> v = y.c(c * m + j);
      if (phre) v *= std::complex<double>(phre[j], -phim[j]);
      if (dcf) v *= dcf[j];
      zre[static_cast<size_t>(j)] = v.real();
      zim[static_cast<size_t>(j)] = v.imag();
    }
    std::fill(xre.begin(), xre.end(), 0.0);
    std::fill(xim.begin(), xim.end(), 0.0);
    kern::adjoint_accumulate(zre.data(), zim.data(), pt, xre.data(),
                             xim.data());
    for (int64_t i = 0; i < h * w; ++i) {
      std::complex<double> s = coils.maps.c(c * h * w + i);
      std::complex<double> v(xre[static_cast<size_t>(i)],
                             xim[static_cast<size_t>(i)]);
      out.add_c(i, std::conj(s) * v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density compensation and per-bin gridded estimates
// ---------------------------------------------------------------------------

// Ramp density compensation for radial sampling, with the flat clip near DC
// keeping the center from being zeroed out entirely; Cartesian rows are
// uniformly dense and take unit weights.
inline std::vector<double> density_weights(const std::vector<double>& kx,
                                           const std::vector<double>& ky,
                                           int64_t h, bool cartesian) {
  std::vector<double> dcf(kx.size());
  if (cartesian) {
    std::fill(dcf.begin(), dcf.end(), 1.0);
    return dcf;
  }
  double clip = M_PI / static_cast<double>(h);
  for (size_t j = 0; j < kx.size(); ++j)
    dcf[j] = std::max(std::hypot(kx[j], ky[j]), clip);
  return dcf;
}

// Density-compensated multi-coil adjoint per bin, each bin normalized to
// unit maximum magnitude (all-zero bins stay zero). Output is complex
// [n_bins, h, w]. A bin without any spokes is a configuration error.
inline Tensor gridded_init(const KSpaceDataset& ds, const BinAssignment& bins,
                           const CoilSet& coils) {
  int64_t h = coils.h(), w = coils.w();
  Tensor gamma = Tensor::zeros_complex({bins.n_bins, h, w});
  for (int64_t b = 0; b < bins.n_bins; ++b) {
    FlatBin fb = collect_bin(ds, bins, b);
    if (fb.m == 0)
      throw ConfigError("gridded_init: bin " + std::to_string(b) +
                        " has no samples");
    std::vector<double> dcf = density_weights(fb.kx, fb.ky, h, ds.cartesian);
    Tensor y = Tensor::zeros_complex({fb.n_coils, fb.m});
    for (int64_t c = 0; c < fb.n_coils; ++c)
      for (int64_t j = 0; j < fb.m; ++j)
        y.set_c(c * fb.m + j,
                {fb.yre[static_cast<size_t>(c * fb.m + j)],
                 fb.yim[static_cast<size_t>(c * fb.m + j)]});
    Tensor xb = nudft_adjoint_coils(y, coils, fb.kx, fb.ky, dcf.data());
    double peak = 0.0;
    for (int64_t i = 0; i < h * w; ++i)
      peak = std::max(peak, std::abs(xb.c(i)));
    double scale = peak > 0.0 ? 1.0 / peak : 1.0;
    for (int64_t i = 0; i < h * w; ++i)
      gamma.set_c(b * h * w + i, xb.c(i) * scale);
  }
  return gamma;
}

// ---------------------------------------------------------------------------
// Noise and coil compression
// ---------------------------------------------------------------------------

// Adds circular complex Gaussian noise of standard deviation `sigma` per
// complex sample (sigma/sqrt(2) per real component) from the "noise"
// substream of `rng`, walking samples in storage order. Returns the realized
// noise energy sum |n|^2 and records it on the dataset.
inline double add_noise(KSpaceDataset& ds, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ConfigError("add_noise: sigma must be >= 0");
  ds.noise_sigma = sigma;
  if (sigma == 0.0) {
    ds.noise_energy = 0.0;
    return 0.0;
  }
  Rng sub = rng.substream("noise");
  double comp = sigma / std::sqrt(2.0);
  double energy = 0.0;
  int64_t n = ds.samples.numel();
  for (int64_t i = 0; i < n; ++i) {
    double nr = comp * sub.normal();
    double ni = comp * sub.normal();
    energy += nr * nr + ni * ni;
    ds.samples.add_c(i, {nr, ni});
  }
  ds.noise_energy = energy;
  return energy;
}

// PCA coil compression. The Gram matrix of the coil channels over all
// samples is diagonalized and data plus sensitivity maps are projected onto
// the leading n_virtual eigenvectors.
struct CoilCompression {
  KSpaceDataset data;
  CoilSet coils;
  Tensor mixing;  // complex [n_orig, n_virtual]; virtual_k = sum_c conj(U[c,k]) orig_c
  double energy_fraction = 1.0;
};

inline CoilCompression coil_compress(const KSpaceDataset& ds,
                                     const CoilSet& coils,
                                     int64_t n_virtual) {
  int64_t nc = ds.n_coils;
  if (coils.count() != nc)
    throw ConfigError("coil_compress: coil maps do not match dataset");
  if (n_virtual < 1 || n_virtual > nc)
    throw ConfigError("coil_compress: n_virtual out of range");
  int64_t n_spokes = ds.n_spokes(), nr = ds.n_readout;
  Tensor gram = Tensor::zeros_complex({nc, nc});
  for (int64_t sp = 0; sp < n_spokes; ++sp)
    for (int64_t i = 0; i < nr; ++i) {
      for (int64_t c1 = 0; c1 < nc; ++c1) {
        std::complex<double> v1 = ds.samples.c((sp * nc + c1) * nr + i);
        for (int64_t c2 = 0; c2 < nc; ++c2) {
          std::complex<double> v2 = ds.samples.c((sp * nc + c2) * nr + i);
          gram.add_c(c1 * nc + c2, v1 * std::conj(v2));
        }
      }
    }
  Tensor evec;
  std::vector<double> lambda;
  hermitian_eig(gram, evec, lambda);

  double total = 0.0, kept = 0.0;
  for (int64_t c = 0; c < nc; ++c) {
    double lv = std::max(lambda[static_cast<size_t>(c)], 0.0);
    total += lv;
    if (c < n_virtual) kept += lv;
  }

  CoilCompression out;
  out.energy_fraction = total > 0.0 ? kept / total : 1.0;
  out.mixing = Tensor::zeros_complex({nc, n_virtual});
  for (int64_t c = 0; c < nc; ++c)
    for (int64_t k = 0; k < n_virtual; ++k)
      out.mixing.set_c(c * n_virtual + k, evec.c(c * nc + k));

  out.data = ds;
  out.data.n_coils = n_virtual;
  out.data.samples = Tensor::zeros_complex({n_spokes, n_virtual, nr});
  for (int64_t sp = 0; sp < n_spokes; ++sp)
    for (int64_t i = 0; i < nr; ++i)
      for (int64_t k = 0; k < n_virtual; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (int64_t c = 0; c < nc; ++c)
          acc += std::conj(out.mixing.c(c * n_virtual + k)) *
                 ds.samples.c((sp * nc + c) * nr + i);
        out.data.samples.set_c((sp * n_virtual + k) * nr + i, acc);
      }

  int64_t h = coils.h(), w = coils.w();
  out.coils.maps = Tensor::zeros_complex({n_virtual, h, w});
  for (int64_t k = 0; k < n_virtual; ++k)
    for (int64_t i = 0; i < h * w; ++i) {
      std::complex<double> acc(0.0, 0.0);
      for (int64_t c = 0; c < nc; ++c)
        acc += std::conj(out.mixing.c(c * n_virtual + k)) *
               coils.maps.c(c * h * w + i);
      out.coils.maps.set_c(k * h * w + i, acc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Acquisition simulation
// ---------------------------------------------------------------------------

// How the simulator evaluates the relaxation clock when rendering truth.
enum class TauSampling {
  PerSpoke,  // each spoke sees the contrast at its own tau (physical)
  BinCenter  // each spoke sees its bin's representative tau (idealized)
};

// Simulates a full acquisition of the phantom: renders the contrast state,
// applies coil sensitivities, evaluates the exact forward transform spoke by
// spoke, optionally through per-segment rigid motion, then adds noise. The
// recorded coordinates are always the nominal trajectory.
inline KSpaceDataset simulate_acquisition(
    const TissueMap& map, const CoilSet& coils, const AcquisitionSpec& acq,
    TauSampling tau_mode, const BinAssignment& bins,
    const MotionTrack* motion, double noise_sigma, uint64_t seed) {
  if (coils.h() != map.h || coils.w() != map.w)
    throw ConfigError("simulate_acquisition: coil maps do not match phantom");
  std::vector<SpokeInfo> schedule =
      generate_schedule(acq.timing, acq.angle_mode, acq.tiny_n);
  int64_t n_spokes = static_cast<int64_t>(schedule.size());
  if (static_cast<int64_t>(bins.bin_of_spoke.size()) != n_spokes)
    throw ConfigError("simulate_acquisition: bin assignment does not match "
                      "schedule");
  if (motion && motion->segments() != acq.timing.n_segments)
    throw ConfigError("simulate_acquisition: motion track segment count "
                      "mismatch");

  KSpaceDataset ds;
  ds.timing = acq.timing;
  ds.schedule = schedule;
  ds.n_coils = coils.count();
  ds.n_readout = acq.n_readout;
  ds.cartesian = acq.cartesian;
  ds.coords = build_trajectory(schedule, acq);
  ds.samples =
      Tensor::zeros_complex({n_spokes, coils.count(), acq.n_readout});

  int64_t h = map.h, w = map.w, nr = acq.n_readout;
  int64_t spokes_per_seg = acq.timing.spokes_per_segment;
  std::vector<double> kx(static_cast<size_t>(nr)),
      ky(static_cast<size_t>(nr));
  std::vector<double> wre, wim;
  std::vector<double> yre(static_cast<size_t>(nr)),
      yim(static_cast<size_t>(nr));
  kern::PhaseTables pt;

  // The contrast state depends only on the within-segment index j (every
  // segment replays the same recovery curve), so render once per j and
  // reuse across segments.
  for (int64_t j = 0; j < spokes_per_seg; ++j) {
    const SpokeInfo& first = schedule[static_cast<size_t>(j)];
    double tau = tau_mode == TauSampling::PerSpoke
                     ? first.tau_ms
                     : bins.rep_tau_ms[static_cast<size_t>(
                           bins.bin_of_spoke[static_cast<size_t>(j)])];
    Tensor rho = render(map, tau);
    for (int64_t s = 0; s < acq.timing.n_segments; ++s) {
      int64_t sp = s * spokes_per_seg + j;
      const double* cd = ds.coords.data.data() + sp * nr * 2;
      for (int64_t i = 0; i < nr; ++i) {
        kx[static_cast<size_t>(i)] = cd[2 * i];
        ky[static_cast<size_t>(i)] = cd[2 * i + 1];
      }
      const double* phre = nullptr;
      const double* phim = nullptr;
      PhasedCoords pc;
      if (motion) {
        pc = apply_motion(kx, ky, motion->nu_rad[static_cast<size_t>(s)],
                          motion->delta[static_cast<size_t>(2 * s)],
                          motion->delta[static_cast<size_t>(2 * s + 1)]);
        kx = pc.kx;
        ky = pc.ky;
        phre = pc.phre.data();
        phim = pc.phim.data();
      }
      kern::build_phase_tables(kx.data(), ky.data(), nr, h, w, pt);
      for (int64_t c = 0; c < coils.count(); ++c) {
        wre.resize(static_cast<size_t>(h * w));
        wim.resize(static_cast<size_t>(h * w));
        for (int64_t i = 0; i < h * w; ++i) {
          std::complex<double> p = rho.c(i) * coils.maps.c(c * h * w + i);
          wre[static_cast<size_t>(i)] = p.real();
          wim[static_cast<size_t>(i)] = p.imag();
        }
        kern::forward(wre.data(), wim.data(), pt, yre.data(), yim.data());
        for (int64_t i = 0; i < nr; ++i) {
          std::complex<double> v(yre[static_cast<size_t>(i)],
                                 yim[static_cast<size_t>(i)]);
          if (phre)
            v *= std::complex<double>(phre[i], phim[i]);
          ds.samples.set_c((sp * coils.count() + c) * nr + i, v);
        }
      }
    }
  }

  Rng rng(seed);
  add_noise(ds, noise_sigma, rng);
  return ds;
}

}  // namespace dfmr
