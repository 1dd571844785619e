#pragma once
// Data-consistency losses wired into the autodiff tape, plus the column mix
// used by the low-rank baseline. Two data terms cover the two training
// regimes:
//
//   normal_eq_loss  - no-motion residual through precomputed normal
//                     equations (fast path, a few FFTs per evaluation)
//   sample_loss     - direct sample-domain residual, optionally with
//                     per-segment rigid motion variables; gradients flow to
//                     the image and to the motion parameters
//
// Context objects (BinNormalEquations, BinContext) are caller-owned and must
// outlive every graph that references them.

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "dfmr/autodiff.hpp"
#include "dfmr/coils.hpp"
#include "dfmr/encoding.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"
#include "dfmr/toeplitz.hpp"

namespace dfmr {

// Flattened per-bin acquisition data prepared for repeated loss evaluation:
// split samples and coil maps, and contiguous sample runs per acquisition
// segment (motion is constant within a run).
struct BinContext {
  int64_t h = 0, w = 0, n_coils = 0, m = 0;
  std::vector<double> kx, ky;    // nominal coordinates, [m]
  std::vector<double> yre, yim;  // observed samples, coil-major [n_coils * m]
  std::vector<double> sre, sim;  // coil maps, coil-major [n_coils * h * w]

  struct SegmentRun {
    int32_t segment = 0;
    int64_t begin = 0, end = 0;  // sample range [begin, end)
  };
  std::vector<SegmentRun> runs;

  static BinContext from(const FlatBin& fb, const CoilSet& coils) {
    BinContext bc;
    bc.h = coils.h();
    bc.w = coils.w();
    bc.n_coils = fb.n_coils;
    bc.m = fb.m;
    bc.kx = fb.kx;
    bc.ky = fb.ky;
    bc.yre = fb.yre;
    bc.yim = fb.yim;
    if (coils.count() != fb.n_coils)
      throw ConfigError("bin context: coil count mismatch");
    split_complex(coils.maps, bc.sre, bc.sim);
    for (int64_t i = 0; i < fb.m; ++i) {
      if (!bc.runs.empty() && bc.runs.back().segment ==
                                  fb.segment[static_cast<size_t>(i)] &&
          bc.runs.back().end == i) {
        bc.runs.back().end = i + 1;
      } else {
        bc.runs.push_back({fb.segment[static_cast<size_t>(i)], i, i + 1});
      }
    }
    return bc;
  }
};

// Residual power through the normal equations: value ||y - A rho||^2 with
// gradient 2 (M rho - a) pulled into rho.
inline Var normal_eq_loss(Var rho, const BinNormalEquations& ne) {
  Graph& g = *rho.g;
  auto cache = std::make_shared<Tensor>();
  double l = ne.loss(g.value(rho), cache.get());
  Tensor lt = Tensor::zeros_real({1});
  lt.data[0] = l;
  bool req = g.node(rho.id).requires_grad;
  int rid = rho.id;
  return g.make(std::move(lt), req, [rid, cache](Graph& gg, int self) {
    if (!gg.node(rid).requires_grad) return;
    double up = gg.node(self).grad.data[0];
    Tensor& dst = gg.grad_buffer(rid);
    for (size_t i = 0; i < dst.data.size(); ++i)
      dst.data[i] += up * cache->data[i];
  });
}

namespace detail {

// Everything the backward pass of sample_loss needs, cached at forward time.
struct SampleLossCache {
  bool motion = false;
  std::vector<kern::PhaseTables> tables;  // one per segment run
  std::vector<double> kpx, kpy;           // effective coordinates, [m]
  std::vector<double> phre, phim;         // translation phases, [m]
  std::vector<double> fre, fim;           // unphased transform, [n_coils * m]
  std::vector<double> fxre, fxim;         // d f / d kx, [n_coils * m]
  std::vector<double> fyre, fyim;         // d f / d ky, [n_coils * m]
  std::vector<double> rre, rim;           // residuals, [n_coils * m]
};

}  // namespace detail

// Direct data term sum_cj |(A(nu, delta) rho)_cj - y_cj|^2 for one bin.
// Pass invalid nu/delta Vars for the static model. nu is real [S] (radians),
// delta real [S, 2] (pixels), indexed by acquisition segment; S may cover
// the whole scan even if this bin only touches some segments.
inline Var sample_loss(Var rho, const BinContext& bin, Var nu = {},
                       Var delta = {}) {
  Graph& g = *rho.g;
  if (nu.valid() != delta.valid())
    throw ConfigError("sample_loss: nu and delta must be given together");
  bool motion = nu.valid();

  const Tensor& rv = g.value(rho);
  if (rv.rank() != 2 || rv.size(0) != bin.h || rv.size(1) != bin.w ||
      !rv.is_complex())
    throw NumericError("sample_loss: image shape mismatch");
  const double* nuv = nullptr;
  const double* dv = nullptr;
  if (motion) {
    const Tensor& nt = g.value(nu);
    const Tensor& dt = g.value(delta);
    if (nt.is_complex() || dt.is_complex() || dt.numel() != 2 * nt.numel())
      throw NumericError("sample_loss: motion parameter shapes mismatch");
    for (const auto& run : bin.runs)
      if (run.segment < 0 || run.segment >= nt.numel())
        throw NumericError("sample_loss: segment index out of track range");
    nuv = nt.data.data();
    dv = dt.data.data();
  }

  auto cache = std::make_shared<detail::SampleLossCache>();
  cache->motion = motion;
  int64_t hw = bin.h * bin.w, m = bin.m, nc = bin.n_coils;
  cache->kpx.assign(bin.kx.begin(), bin.kx.end());
  cache->kpy.assign(bin.ky.begin(), bin.ky.end());
  cache->phre.assign(static_cast<size_t>(m), 1.0);
  cache->phim.assign(static_cast<size_t>(m), 0.0);
  cache->fre.resize(static_cast<size_t>(nc * m));
  cache->fim.resize(static_cast<size_t>(nc * m));
  cache->rre.resize(static_cast<size_t>(nc * m));
  cache->rim.resize(static_cast<size_t>(nc * m));
  if (motion) {
    cache->fxre.resize(static_cast<size_t>(nc * m));
    cache->fxim.resize(static_cast<size_t>(nc * m));
    cache->fyre.resize(static_cast<size_t>(nc * m));
    cache->fyim.resize(static_cast<size_t>(nc * m));
  }

  // Coil-weighted images, shared by every segment run.
  std::vector<double> wre(static_cast<size_t>(nc * hw)),
      wim(static_cast<size_t>(nc * hw));
  for (int64_t c = 0; c < nc; ++c)
    for (int64_t i = 0; i < hw; ++i) {
      double pr = rv.data[static_cast<size_t>(2 * i)];
      double pi = rv.data[static_cast<size_t>(2 * i + 1)];
      double sr = bin.sre[static_cast<size_t>(c * hw + i)];
      double si = bin.sim[static_cast<size_t>(c * hw + i)];
      wre[static_cast<size_t>(c * hw + i)] = pr * sr - pi * si;
      wim[static_cast<size_t>(c * hw + i)] = pr * si + pi * sr;
    }

  if (motion) {
    for (const auto& run : bin.runs) {
      double cs = std::cos(nuv[run.segment]), sn = std::sin(nuv[run.segment]);
      double dx = dv[2 * run.segment], dy = dv[2 * run.segment + 1];
      for (int64_t j = run.begin; j < run.end; ++j) {
        double rx = cs * bin.kx[static_cast<size_t>(j)] -
                    sn * bin.ky[static_cast<size_t>(j)];
        double ry = sn * bin.kx[static_cast<size_t>(j)] +
                    cs * bin.ky[static_cast<size_t>(j)];
        cache->kpx[static_cast<size_t>(j)] = rx;
        cache->kpy[static_cast<size_t>(j)] = ry;
        double ang = -(rx * dx + ry * dy);
        cache->phre[static_cast<size_t>(j)] = std::cos(ang);
        cache->phim[static_cast<size_t>(j)] = std::sin(ang);
      }
    }
  }

  double loss = 0.0;
  cache->tables.resize(bin.runs.size());
  for (size_t ri = 0; ri < bin.runs.size(); ++ri) {
    const auto& run = bin.runs[ri];
    int64_t rm = run.end - run.begin;
    kern::PhaseTables& pt = cache->tables[ri];
    kern::build_phase_tables(cache->kpx.data() + run.begin,
                             cache->kpy.data() + run.begin, rm, bin.h, bin.w,
                             pt);
    for (int64_t c = 0; c < nc; ++c) {
      int64_t off = c * m + run.begin;
      if (motion) {
        kern::forward_coordgrad(
            wre.data() + c * hw, wim.data() + c * hw, pt,
            cache->fre.data() + off, cache->fim.data() + off,
            cache->fxre.data() + off, cache->fxim.data() + off,
            cache->fyre.data() + off, cache->fyim.data() + off);
      } else {
        kern::forward(wre.data() + c * hw, wim.data() + c * hw, pt,
                      cache->fre.data() + off, cache->fim.data() + off);
      }
      for (int64_t j = run.begin; j < run.end; ++j) {
        size_t sj = static_cast<size_t>(c * m + j);
        double pr = cache->phre[static_cast<size_t>(j)];
        double pi = cache->phim[static_cast<size_t>(j)];
        double yr = cache->fre[sj] * pr - cache->fim[sj] * pi;
        double yi = cache->fre[sj] * pi + cache->fim[sj] * pr;
        double rr = yr - bin.yre[sj];
        double rimv = yi - bin.yim[sj];
        cache->rre[sj] = rr;
        cache->rim[sj] = rimv;
        loss += rr * rr + rimv * rimv;
      }
    }
  }

  Tensor lt = Tensor::zeros_real({1});
  lt.data[0] = loss;
  bool req = g.node(rho.id).requires_grad ||
             (motion && (g.node(nu.id).requires_grad ||
                         g.node(delta.id).requires_grad));
  int rid = rho.id, nid = motion ? nu.id : -1, did = motion ? delta.id : -1;
  const BinContext* bp = &bin;

  return g.make(std::move(lt), req, [rid, nid, did, bp, cache](Graph& gg,
                                                               int self) {
    double up = gg.node(self).grad.data[0];
    const BinContext& bc = *bp;
    int64_t hw = bc.h * bc.w, m = bc.m, nc = bc.n_coils;

    if (gg.node(rid).requires_grad) {
      // g_rho = sum_c conj(s_c) A^H (2 conj(phase) r), per segment run.
      std::vector<double> zre(static_cast<size_t>(m)),
          zim(static_cast<size_t>(m));
      std::vector<double> gwre(static_cast<size_t>(hw)),
          gwim(static_cast<size_t>(hw));
      Tensor& dst = gg.grad_buffer(rid);
      for (int64_t c = 0; c < nc; ++c) {
        for (int64_t j = 0; j < m; ++j) {
          size_t sj = static_cast<size_t>(c * m + j);
          double pr = cache->phre[static_cast<size_t>(j)];
          double pi = -cache->phim[static_cast<size_t>(j)];  // conj(phase)
          double s = 2.0 * up;
          zre[static_cast<size_t>(j)] =
              s * (cache->rre[sj] * pr - cache->rim[sj] * pi);
          zim[static_cast<size_t>(j)] =
              s * (cache->rre[sj] * pi + cache->rim[sj] * pr);
        }
        std::fill(gwre.begin(), gwre.end(), 0.0);
        std::fill(gwim.begin(), gwim.end(), 0.0);
        for (size_t ri = 0; ri < bc.runs.size(); ++ri) {
          const auto& run = bc.runs[ri];
          kern::adjoint_accumulate(zre.data() + run.begin,
                                   zim.data() + run.begin, cache->tables[ri],
                                   gwre.data(), gwim.data());
        }
        for (int64_t i = 0; i < hw; ++i) {
          double sr = bc.sre[static_cast<size_t>(c * hw + i)];
          double si = -bc.sim[static_cast<size_t>(c * hw + i)];  // conj(s)
          double gr = gwre[static_cast<size_t>(i)];
          double gi = gwim[static_cast<size_t>(i)];
          dst.data[static_cast<size_t>(2 * i)] += sr * gr - si * gi;
          dst.data[static_cast<size_t>(2 * i + 1)] += sr * gi + si * gr;
        }
      }
    }

    if (!cache->motion) return;
    bool want_nu = gg.node(nid).requires_grad;
    bool want_delta = gg.node(did).requires_grad;
    if (!want_nu && !want_delta) return;
    const Tensor& dt = gg.node(did).value;

    for (const auto& run : bc.runs) {
      double acc_nu = 0.0, acc_dx = 0.0, acc_dy = 0.0;
      double ddx = dt.data[static_cast<size_t>(2 * run.segment)];
      double ddy = dt.data[static_cast<size_t>(2 * run.segment + 1)];
      for (int64_t c = 0; c < nc; ++c) {
        for (int64_t j = run.begin; j < run.end; ++j) {
          size_t sj = static_cast<size_t>(c * m + j);
          size_t uj = static_cast<size_t>(j);
          std::complex<double> r(cache->rre[sj], cache->rim[sj]);
          std::complex<double> ph(cache->phre[uj], cache->phim[uj]);
          std::complex<double> f(cache->fre[sj], cache->fim[sj]);
          std::complex<double> y = ph * f;  // phased sample
          double kx = cache->kpx[uj], ky = cache->kpy[uj];
          if (want_delta) {
            // dy/d delta = -i k' y
            std::complex<double> gx = std::complex<double>(0.0, -kx) * y;
            std::complex<double> gy = std::complex<double>(0.0, -ky) * y;
            acc_dx += 2.0 * (r.real() * gx.real() + r.imag() * gx.imag());
            acc_dy += 2.0 * (r.real() * gy.real() + r.imag() * gy.imag());
          }
          if (want_nu) {
            // k' rotates with nu, so dk'/dnu = (-k'y, k'x); the chain rule
            // hits both the translation phase and the transform itself.
            double kdx = -ky, kdy = kx;
            std::complex<double> fx(cache->fxre[sj], cache->fxim[sj]);
            std::complex<double> fy(cache->fyre[sj], cache->fyim[sj]);
            std::complex<double> dydnu =
                ph * (std::complex<double>(0.0, -(kdx * ddx + kdy * ddy)) * f +
                      kdx * fx + kdy * fy);
            acc_nu += 2.0 * (r.real() * dydnu.real() + r.imag() * dydnu.imag());
          }
        }
      }
      if (want_nu)
        gg.grad_buffer(nid).data[static_cast<size_t>(run.segment)] +=
            up * acc_nu;
      if (want_delta) {
        Tensor& gd = gg.grad_buffer(did);
        gd.data[static_cast<size_t>(2 * run.segment)] += up * acc_dx;
        gd.data[static_cast<size_t>(2 * run.segment + 1)] += up * acc_dy;
      }
    }
  });
}

// Column mix of the low-rank factorization: rho_b = reshape(U V[:, b]).
// u: complex [h*w, r]; v: complex [r, n_bins]; output complex [h, w].
inline Var column_mix(Var u, Var v, int64_t b, int64_t h, int64_t w) {
  Graph& g = *u.g;
  const Tensor& ut = g.value(u);
  const Tensor& vt = g.value(v);
  if (ut.rank() != 2 || vt.rank() != 2 || !ut.is_complex() ||
      !vt.is_complex() || ut.size(0) != h * w || ut.size(1) != vt.size(0))
    throw NumericError("column_mix: factor shapes mismatch");
  if (b < 0 || b >= vt.size(1))
    throw NumericError("column_mix: bin index out of range");
  int64_t r = ut.size(1), nb = vt.size(1), hw = h * w;

  Tensor out = Tensor::zeros_complex({h, w});
  for (int64_t p = 0; p < hw; ++p) {
    std::complex<double> acc(0.0, 0.0);
    for (int64_t k = 0; k < r; ++k)
      acc += ut.c(p * r + k) * vt.c(k * nb + b);
    out.set_c(p, acc);
  }

  bool req = g.node(u.id).requires_grad || g.node(v.id).requires_grad;
  int uid = u.id, vid = v.id;
  return g.make(std::move(out), req,
                [uid, vid, b, r, nb, hw](Graph& gg, int self) {
    const Tensor& go = gg.node(self).grad;
    const Tensor& uv = gg.node(uid).value;
    const Tensor& vv = gg.node(vid).value;
    if (gg.node(uid).requires_grad) {
      Tensor& gu = gg.grad_buffer(uid);
      for (int64_t p = 0; p < hw; ++p) {
        std::complex<double> gp = go.c(p);
        for (int64_t k = 0; k < r; ++k)
          gu.add_c(p * r + k, gp * std::conj(vv.c(k * nb + b)));
      }
    }
    if (gg.node(vid).requires_grad) {
      Tensor& gv = gg.grad_buffer(vid);
      for (int64_t k = 0; k < r; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (int64_t p = 0; p < hw; ++p)
          acc += std::conj(uv.c(p * r + k)) * go.c(p);
        gv.add_c(k * nb + b, acc);
      }
    }
  });
}

}  // namespace dfmr
