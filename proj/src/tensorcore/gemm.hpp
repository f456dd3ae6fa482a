#pragma once

#include <cstddef>

// Row-major dense kernels used by matmul and conv2d. All accumulate into C.
namespace fpad::detail {

// C[M×N] += A[M×K] · B[K×N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[M×N] += Aᵀ · B with A stored K×M
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[M×N] += A · Bᵀ with B stored N×K
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

}  // namespace fpad::detail
