#pragma once
// Iterative radix-2 FFT on interleaved complex doubles. Sizes must be powers
// of two; callers zero-pad to next_pow2 as needed. Forward applies
// sum_n x[n] e^{-2 pi i kn/N}; inverse includes the 1/N factor. Twiddles are
// tabulated from std::sin/cos per stage, no recurrences, so accuracy stays at
// a few ulps times log2(N).

#include <cmath>
#include <cstdint>
#include <vector>

#include "dfmr/errors.hpp"

namespace dfmr {

inline int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

class FftPlan {
 public:
  explicit FftPlan(int64_t n) : n_(n) {
    if (n <= 0 || (n & (n - 1)) != 0)
      throw NumericError("FftPlan: size must be a power of two");
    rev_.resize(static_cast<size_t>(n));
    int log2n = 0;
    while ((int64_t{1} << log2n) < n) ++log2n;
    for (int64_t i = 0; i < n; ++i) {
      int64_t r = 0;
      for (int b = 0; b < log2n; ++b)
        if (i & (int64_t{1} << b)) r |= int64_t{1} << (log2n - 1 - b);
      rev_[static_cast<size_t>(i)] = r;
    }
    // Twiddles for the forward transform, half-size table per stage.
    tw_.resize(static_cast<size_t>(n));  // concatenated stages: 1+2+4+...=n-1
    size_t off = 0;
    for (int64_t len = 2; len <= n; len <<= 1) {
      int64_t half = len / 2;
      for (int64_t j = 0; j < half; ++j) {
        double a = -2.0 * M_PI * static_cast<double>(j) / static_cast<double>(len);
        tw_[off + static_cast<size_t>(j)] = {std::cos(a), std::sin(a)};
      }
      off += static_cast<size_t>(half);
    }
  }

  int64_t size() const { return n_; }

  // In-place transform of n interleaved complex values (2n doubles).
  void forward(double* d) const { run(d, false); }
  void inverse(double* d) const { run(d, true); }

 private:
  struct Cplx {
    double re, im;
  };

  void run(double* d, bool inverse) const {
    int64_t n = n_;
    for (int64_t i = 0; i < n; ++i) {
      int64_t r = rev_[static_cast<size_t>(i)];
      if (r > i) {
        std::swap(d[2 * i], d[2 * r]);
        std::swap(d[2 * i + 1], d[2 * r + 1]);
      }
    }
    size_t off = 0;
    for (int64_t len = 2; len <= n; len <<= 1) {
      int64_t half = len / 2;
      for (int64_t base = 0; base < n; base += len) {
        for (int64_t j = 0; j < half; ++j) {
          const Cplx& t = tw_[off + static_cast<size_t>(j)];
          double twr = t.re;
          double twi = inverse ? -t.im : t.im;
          int64_t a = base + j, b = a + half;
          double xr = d[2 * b] * twr - d[2 * b + 1] * twi;
          double xi = d[2 * b] * twi + d[2 * b + 1] * twr;
          d[2 * b] = d[2 * a] - xr;
          d[2 * b + 1] = d[2 * a + 1] - xi;
          d[2 * a] += xr;
          d[2 * a + 1] += xi;
        }
      }
      off += static_cast<size_t>(half);
    }
    if (inverse) {
      double s = 1.0 / static_cast<double>(n);
      for (int64_t i = 0; i < 2 * n; ++i) d[i] *= s;
    }
  }

  int64_t n_;
  std::vector<int64_t> rev_;
  std::vector<Cplx> tw_;
};

// In-place 2D transform of an h-by-w interleaved complex buffer (row major).
// h and w must match the plans' sizes.
inline void fft2_inplace(double* d, const FftPlan& row_plan,
                         const FftPlan& col_plan, bool inverse) {
  int64_t w = row_plan.size(), h = col_plan.size();
  for (int64_t y = 0; y < h; ++y) {
    double* row = d + 2 * y * w;
    if (inverse)
      row_plan.inverse(row);
    else
      row_plan.forward(row);
  }
  std::vector<double> col(static_cast<size_t>(2 * h));
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) {
      col[static_cast<size_t>(2 * y)] = d[2 * (y * w + x)];
      col[static_cast<size_t>(2 * y + 1)] = d[2 * (y * w + x) + 1];
    }
    if (inverse)
      col_plan.inverse(col.data());
    else
      col_plan.forward(col.data());
    for (int64_t y = 0; y < h; ++y) {
      d[2 * (y * w + x)] = col[static_cast<size_t>(2 * y)];
      d[2 * (y * w + x) + 1] = col[static_cast<size_t>(2 * y + 1)];
    }
  }
}

}  // namespace dfmr
