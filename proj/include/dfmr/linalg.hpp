#pragma once
// Small dense Hermitian eigensolver (cyclic complex Jacobi). Used for PCA
// coil compression where matrices are tiny (n_coils x n_coils), so an
// O(n^3 * sweeps) method with excellent accuracy beats pulling in a LAPACK
// dependency.

#include <cmath>
#include <complex>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

// A: complex [n,n] Hermitian (only assumed, not checked beyond shape).
// On return: eigenvalues descending in `lambda`, matching unit eigenvectors
// in the columns of V (complex [n,n]).
inline void hermitian_eig(const Tensor& a_in, Tensor& v_out,
                          std::vector<double>& lambda) {
  if (a_in.rank() != 2 || a_in.size(0) != a_in.size(1) || !a_in.is_complex())
    throw NumericError("hermitian_eig: square complex matrix expected");
  int64_t n = a_in.size(0);
  Tensor a = a_in;
  v_out = Tensor::zeros_complex({n, n});
  for (int64_t i = 0; i < n; ++i) v_out.set_c(i * n + i, {1.0, 0.0});

  auto off_norm2 = [&] {
    double s = 0.0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) s += std::norm(a.c(p * n + q));
    return s;
  };
  double scale = 0.0;
  for (int64_t i = 0; i < n * n; ++i) scale += std::norm(a.c(i));
  double tol = 1e-28 * (scale > 0.0 ? scale : 1.0);

  for (int sweep = 0; sweep < 64 && off_norm2() > tol; ++sweep) {
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        std::complex<double> apq = a.c(p * n + q);
        double b = std::abs(apq);
        if (b == 0.0) continue;
        std::complex<double> phase = apq / b;  // e^{i arg(apq)}
        double app = a.c(p * n + p).real();
        double aqq = a.c(q * n + q).real();
        double tau = (aqq - app) / (2.0 * b);
        double t = (tau >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        // Unitary Givens: col_p' = c*col_p - s*conj(phase)*col_q,
        //                 col_q' = s*phase*col_p + c*col_q.
        for (int64_t i = 0; i < n; ++i) {
          std::complex<double> aip = a.c(i * n + p);
          std::complex<double> aiq = a.c(i * n + q);
          a.set_c(i * n + p, c * aip - s * std::conj(phase) * aiq);
          a.set_c(i * n + q, s * phase * aip + c * aiq);
        }
        for (int64_t i = 0; i < n; ++i) {
          std::complex<double> api = a.c(p * n + i);
          std::complex<double> aqi = a.c(q * n + i);
          a.set_c(p * n + i, c * api - s * phase * aqi);
          a.set_c(q * n + i, s * std::conj(phase) * api + c * aqi);
        }
        for (int64_t i = 0; i < n; ++i) {
          std::complex<double> vip = v_out.c(i * n + p);
          std::complex<double> viq = v_out.c(i * n + q);
          v_out.set_c(i * n + p, c * vip - s * std::conj(phase) * viq);
          v_out.set_c(i * n + q, s * phase * vip + c * viq);
        }
      }
  }

  lambda.resize(static_cast<size_t>(n));
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    lambda[static_cast<size_t>(i)] = a.c(i * n + i).real();
    order[static_cast<size_t>(i)] = i;
  }
  // Descending eigenvalue order, stable for ties.
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j)
      if (lambda[static_cast<size_t>(order[static_cast<size_t>(j)])] >
          lambda[static_cast<size_t>(order[static_cast<size_t>(i)])])
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  std::vector<double> sorted(static_cast<size_t>(n));
  Tensor v_sorted = Tensor::zeros_complex({n, n});
  for (int64_t k = 0; k < n; ++k) {
    int64_t src = order[static_cast<size_t>(k)];
    sorted[static_cast<size_t>(k)] = lambda[static_cast<size_t>(src)];
    for (int64_t i = 0; i < n; ++i)
      v_sorted.set_c(i * n + k, v_out.c(i * n + src));
  }
  lambda = std::move(sorted);
  v_out = std::move(v_sorted);
}

}  // namespace dfmr
