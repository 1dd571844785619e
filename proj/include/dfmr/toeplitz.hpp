#pragma once
// Normal-equations fast path for the no-motion data term of one bin.
//
// For samples {k_j} and coil maps {s_c}, the residual expands to
//   sum_cj |y_cj - (A rho)_cj|^2 = ||y||^2 - 2 Re<a, rho> + <M rho, rho>
// with a = A^H y a fixed image and M = A^H A. M applies as a convolution,
//   (M rho)(r) = sum_c conj(s_c(r)) * (T * (s_c rho))(r),
//   T(d) = sum_j exp(+i k_j . d),   d on the lag grid [-(h-1), h-1] x ...
// T depends only on the sample coordinates, so it is built once per bin and
// the convolution runs as a pointwise product between zero-padded FFTs. One
// loss-plus-gradient evaluation then costs a few 2D FFTs instead of a pass
// over every sample, which is what makes epoch-scale training affordable on
// the exact model.
//
// Gradient convention: with complex values packed as (re, im) pairs, the
// derivative of the real loss with respect to rho is 2 (M rho - a), stored
// pairwise as (dL/dRe, dL/dIm).

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "dfmr/coils.hpp"
#include "dfmr/encoding.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/fft.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

class BinNormalEquations {
 public:
  BinNormalEquations(const FlatBin& fb, const CoilSet& coils)
      : h_(coils.h()),
        w_(coils.w()),
        ny_(next_pow2(2 * coils.h() - 1)),
        nx_(next_pow2(2 * coils.w() - 1)),
        coils_(coils),
        row_plan_(next_pow2(2 * coils.w() - 1)),
        col_plan_(next_pow2(2 * coils.h() - 1)) {
    if (fb.m <= 0)
      throw ConfigError("normal equations: bin has no samples");
    if (fb.n_coils != coils.count())
      throw ConfigError("normal equations: coil count mismatch");

    yy_ = 0.0;
    for (size_t i = 0; i < fb.yre.size(); ++i)
      yy_ += fb.yre[i] * fb.yre[i] + fb.yim[i] * fb.yim[i];

    Tensor y = Tensor::zeros_complex({fb.n_coils, fb.m});
    for (int64_t i = 0; i < fb.n_coils * fb.m; ++i)
      y.set_c(i, {fb.yre[static_cast<size_t>(i)],
                  fb.yim[static_cast<size_t>(i)]});
    a_ = nudft_adjoint_coils(y, coils, fb.kx, fb.ky);

    // Toeplitz kernel T on the centered lag grid, evaluated with the shared
    // adjoint kernel by treating lags as pixels of a (2h-1) x (2w-1) image.
    int64_t lh = 2 * h_ - 1, lw = 2 * w_ - 1;
    kern::PhaseTables pt;
    kern::build_phase_tables(fb.kx.data(), fb.ky.data(), fb.m, lh, lw, pt);
    std::vector<double> ones(static_cast<size_t>(fb.m), 1.0);
    std::vector<double> zeros(static_cast<size_t>(fb.m), 0.0);
    std::vector<double> tre(static_cast<size_t>(lh * lw), 0.0),
        tim(static_cast<size_t>(lh * lw), 0.0);
    kern::adjoint_accumulate(ones.data(), zeros.data(), pt, tre.data(),
                             tim.data());

    // Embed with wraparound so circular convolution on the padded grid
    // equals linear convolution on the image, then transform once.
    that_.assign(static_cast<size_t>(2 * ny_ * nx_), 0.0);
    for (int64_t dy = -(h_ - 1); dy <= h_ - 1; ++dy)
      for (int64_t dx = -(w_ - 1); dx <= w_ - 1; ++dx) {
        int64_t src = (dy + h_ - 1) * lw + (dx + w_ - 1);
        int64_t gy = (dy + ny_) % ny_;
        int64_t gx = (dx + nx_) % nx_;
        that_[static_cast<size_t>(2 * (gy * nx_ + gx))] =
            tre[static_cast<size_t>(src)];
        that_[static_cast<size_t>(2 * (gy * nx_ + gx) + 1)] =
            tim[static_cast<size_t>(src)];
      }
    fft2_inplace(that_.data(), row_plan_, col_plan_, false);

    pad_.assign(static_cast<size_t>(2 * ny_ * nx_), 0.0);
  }

  int64_t h() const { return h_; }
  int64_t w() const { return w_; }
  double constant() const { return yy_; }
  const Tensor& rhs() const { return a_; }

  // M rho = A^H A rho, complex [h, w].
  Tensor apply(const Tensor& rho) const {
    if (rho.rank() != 2 || rho.size(0) != h_ || rho.size(1) != w_ ||
        !rho.is_complex())
      throw NumericError("normal equations: image shape mismatch");
    Tensor out = Tensor::zeros_complex({h_, w_});
    int64_t hw = h_ * w_;
    for (int64_t c = 0; c < coils_.count(); ++c) {
      std::fill(pad_.begin(), pad_.end(), 0.0);
      for (int64_t row = 0; row < h_; ++row)
        for (int64_t col = 0; col < w_; ++col) {
          std::complex<double> z =
              rho.c(row * w_ + col) * coils_.maps.c(c * hw + row * w_ + col);
          pad_[static_cast<size_t>(2 * (row * nx_ + col))] = z.real();
          pad_[static_cast<size_t>(2 * (row * nx_ + col) + 1)] = z.imag();
        }
      fft2_inplace(pad_.data(), row_plan_, col_plan_, false);
      for (int64_t i = 0; i < ny_ * nx_; ++i) {
        double pr = pad_[static_cast<size_t>(2 * i)];
        double pi = pad_[static_cast<size_t>(2 * i + 1)];
        double tr = that_[static_cast<size_t>(2 * i)];
        double ti = that_[static_cast<size_t>(2 * i + 1)];
        pad_[static_cast<size_t>(2 * i)] = pr * tr - pi * ti;
        pad_[static_cast<size_t>(2 * i + 1)] = pr * ti + pi * tr;
      }
      fft2_inplace(pad_.data(), row_plan_, col_plan_, true);
      for (int64_t row = 0; row < h_; ++row)
        for (int64_t col = 0; col < w_; ++col) {
          std::complex<double> v(
              pad_[static_cast<size_t>(2 * (row * nx_ + col))],
              pad_[static_cast<size_t>(2 * (row * nx_ + col) + 1)]);
          std::complex<double> s = coils_.maps.c(c * hw + row * w_ + col);
          out.add_c(row * w_ + col, std::conj(s) * v);
        }
    }
    return out;
  }

  // Residual power ||y - A rho||^2; optionally also its gradient
  // 2 (M rho - a) packed as (dL/dRe, dL/dIm) pairs.
  double loss(const Tensor& rho, Tensor* grad = nullptr) const {
    Tensor m = apply(rho);
    double cross = 0.0, quad = 0.0;
    int64_t hw = h_ * w_;
    for (int64_t i = 0; i < hw; ++i) {
      std::complex<double> r = rho.c(i);
      cross += a_.c(i).real() * r.real() + a_.c(i).imag() * r.imag();
      quad += m.c(i).real() * r.real() + m.c(i).imag() * r.imag();
    }
    if (grad) {
      if (!grad->same_layout(rho)) *grad = Tensor::zeros_complex({h_, w_});
      for (int64_t i = 0; i < hw; ++i)
        grad->set_c(i, 2.0 * (m.c(i) - a_.c(i)));
    }
    return yy_ - 2.0 * cross + quad;
  }

 private:
  int64_t h_, w_, ny_, nx_;
  CoilSet coils_;
  double yy_ = 0.0;
  Tensor a_;
  std::vector<double> that_;         // FFT of the embedded Toeplitz kernel
  mutable std::vector<double> pad_;  // FFT work grid, ny_ x nx_ interleaved
  FftPlan row_plan_, col_plan_;
};

}  // namespace dfmr
