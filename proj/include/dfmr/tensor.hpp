#pragma once
// Dense row-major tensors in float64. Complex tensors store interleaved
// (re, im) pairs in the same double buffer; there is no reinterpret_cast of
// the buffer to std::complex anywhere, elements are packed and unpacked
// explicitly through c()/set_c().

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "dfmr/errors.hpp"

namespace dfmr {

enum class DType { Real64, Complex128 };

inline int dtype_width(DType dt) { return dt == DType::Complex128 ? 2 : 1; }

class Tensor {
 public:
  DType dtype = DType::Real64;
  std::vector<int64_t> shape;
  std::vector<double> data;  // numel() * dtype_width(dtype) doubles

  Tensor() = default;

  Tensor(DType dt, std::vector<int64_t> sh) : dtype(dt), shape(std::move(sh)) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw NumericError("tensor: negative dimension");
      n *= d;
    }
    data.assign(static_cast<size_t>(n) * dtype_width(dtype), 0.0);
  }

  static Tensor zeros_real(std::vector<int64_t> sh) {
    return Tensor(DType::Real64, std::move(sh));
  }
  static Tensor zeros_complex(std::vector<int64_t> sh) {
    return Tensor(DType::Complex128, std::move(sh));
  }

  bool is_complex() const { return dtype == DType::Complex128; }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t size(int d) const { return shape[static_cast<size_t>(d)]; }

  // Logical element count (a complex element counts once).
  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  // Stored doubles, numel() * width.
  int64_t scalars() const { return static_cast<int64_t>(data.size()); }

  // Row-major flat offset in logical elements.
  int64_t offset(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      off = off * shape[d] + i;
      ++d;
    }
    return off;
  }

  // Typed element access. The dtype guards cost one predictable branch and
  // turn real/complex layout confusion into an exception instead of silently
  // reading misaligned pairs.
  double& r(int64_t flat) {
    require(DType::Real64);
    return data[static_cast<size_t>(flat)];
  }
  double r(int64_t flat) const {
    require(DType::Real64);
    return data[static_cast<size_t>(flat)];
  }

  std::complex<double> c(int64_t flat) const {
    require(DType::Complex128);
    return {data[static_cast<size_t>(2 * flat)],
            data[static_cast<size_t>(2 * flat + 1)]};
  }
  void set_c(int64_t flat, std::complex<double> v) {
    require(DType::Complex128);
    data[static_cast<size_t>(2 * flat)] = v.real();
    data[static_cast<size_t>(2 * flat + 1)] = v.imag();
  }
  void add_c(int64_t flat, std::complex<double> v) {
    require(DType::Complex128);
    data[static_cast<size_t>(2 * flat)] += v.real();
    data[static_cast<size_t>(2 * flat + 1)] += v.imag();
  }

  void fill(double v) { data.assign(data.size(), v); }

  bool same_layout(const Tensor& o) const {
    return dtype == o.dtype && shape == o.shape;
  }

 private:
  void require(DType dt) const {
    if (dtype != dt)
      throw NumericError(dt == DType::Complex128
                             ? "tensor: complex access on real tensor"
                             : "tensor: real access on complex tensor");
  }
};

// Bitwise equality, used by determinism checks (tolerant comparisons would
// hide nondeterminism).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.same_layout(b) && a.data == b.data;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) {
    double a = v < 0 ? -v : v;
    if (a > m) m = a;
  }
  return m;
}

inline double sum_abs(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v < 0 ? -v : v;
  return s;
}

}  // namespace dfmr
