#pragma once

#include <cstddef>

namespace sled::kernels {

// Dense kernels behind the autodiff ops. Each has an OpenMP-parallel
// entry point (the default) and a serial reference twin in ::serial.
// Parallel variants split work by output row only; every output element
// keeps the serial accumulation order, so results are bit-identical to
// the reference for any thread count. tests/test_kernels.cpp asserts
// this and tools/bench_kernels.cpp compares throughput.
//
// When `accumulate` is true the kernel adds into `c` instead of
// overwriting it (used for gradient accumulation).

// c[m x n] = a[m x k] * b[k x n]
void mm_nn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[m x n] = a[m x k] * b[n x k]^T
void mm_nt(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[m x n] = a[k x m]^T * b[k x n]
void mm_tn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// Row-wise softmax over the last axis, numerically stabilized.
void softmax_rows(double* y, const double* x, std::size_t rows, std::size_t cols);

// Row-wise layer normalization without affine parameters.
// inv_std (len rows) receives 1/sqrt(var + eps) for the backward pass;
// may be null.
void layernorm_rows(double* y, const double* x, std::size_t rows, std::size_t cols,
                    double eps, double* inv_std);

// Exact (erf-based) GELU and its derivative.
void gelu(double* y, const double* x, std::size_t n);
void gelu_grad(double* dx, const double* x, const double* dy, std::size_t n,
               bool accumulate = false);

namespace serial {
void mm_nn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void mm_nt(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void mm_tn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(double* y, const double* x, std::size_t rows, std::size_t cols);
void layernorm_rows(double* y, const double* x, std::size_t rows, std::size_t cols,
                    double eps, double* inv_std);
void gelu(double* y, const double* x, std::size_t n);
void gelu_grad(double* dx, const double* x, const double* dy, std::size_t n,
               bool accumulate = false);
} // namespace serial

} // namespace sled::kernels
