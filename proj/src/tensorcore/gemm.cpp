#include "gemm.hpp"

#include <vector>

namespace fpad::detail {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    std::size_t p = 0;
    // Two rows of B per pass halves the load/store traffic on C.
    for (; p + 1 < k; p += 2) {
      const double a0 = arow[p];
      const double a1 = arow[p + 1];
      const double* __restrict b0 = b + p * n;
      const double* __restrict b1 = b0 + n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j];
    }
    for (; p < k; ++p) {
      const double a0 = arow[p];
      const double* __restrict b0 = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a0 * b0[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    std::size_t p = 0;
    for (; p + 1 < k; p += 2) {
      const double a0 = a[p * m + i];
      const double a1 = a[(p + 1) * m + i];
      const double* __restrict b0 = b + p * n;
      const double* __restrict b1 = b0 + n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j];
    }
    for (; p < k; ++p) {
      const double a0 = a[p * m + i];
      const double* __restrict b0 = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a0 * b0[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace fpad::detail
