#include "sled/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sled::kernels {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Work threshold below which forking a parallel region costs more than
// it saves (measured on small transformer-sized operands).
constexpr std::size_t kParallelMinWork = 1u << 15;

inline void row_nn(double* ci, const double* a, const double* b,
                   std::size_t i, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = ai[kk];
        const double* bk = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

inline void row_nt(double* ci, const double* a, const double* b,
                   std::size_t i, std::size_t k, std::size_t n, bool accumulate) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double acc = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
        ci[j] = accumulate ? ci[j] + acc : acc;
    }
}

inline void row_tn(double* ci, const double* a, const double* b,
                   std::size_t i, std::size_t m, std::size_t k, std::size_t n,
                   bool accumulate) {
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = a[kk * m + i];
        const double* bk = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

inline void softmax_row(double* y, const double* x, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layernorm_row(double* y, const double* x, std::size_t cols,
                          double eps, double* inv_std_out) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        const double d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv_std;
    if (inv_std_out) *inv_std_out = inv_std;
}

inline double gelu_one(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_grad_one(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

} // namespace

// ---------------------------------------------------------------- parallel

void mm_nn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const std::size_t work = m * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(m); ++i)
        row_nn(c + i * n, a, b, static_cast<std::size_t>(i), k, n, accumulate);
}

void mm_nt(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const std::size_t work = m * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(m); ++i)
        row_nt(c + i * n, a, b, static_cast<std::size_t>(i), k, n, accumulate);
}

void mm_tn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const std::size_t work = m * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(m); ++i)
        row_tn(c + i * n, a, b, static_cast<std::size_t>(i), m, k, n, accumulate);
}

void softmax_rows(double* y, const double* x, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(rows); ++i)
        softmax_row(y + i * cols, x + i * cols, cols);
}

void layernorm_rows(double* y, const double* x, std::size_t rows, std::size_t cols,
                    double eps, double* inv_std) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(rows); ++i)
        layernorm_row(y + i * cols, x + i * cols, cols, eps,
                      inv_std ? inv_std + i : nullptr);
}

void gelu(double* y, const double* x, std::size_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        y[i] = gelu_one(x[i]);
}

void gelu_grad(double* dx, const double* x, const double* dy, std::size_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static) if (n > kParallelMinWork)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double g = dy[i] * gelu_grad_one(x[i]);
        dx[i] = accumulate ? dx[i] + g : g;
    }
}

// ----------------------------------------------------------------- serial

namespace serial {

void mm_nn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) row_nn(c + i * n, a, b, i, k, n, accumulate);
}

void mm_nt(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) row_nt(c + i * n, a, b, i, k, n, accumulate);
}

void mm_tn(double* c, const double* a, const double* b,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) row_tn(c + i * n, a, b, i, m, k, n, accumulate);
}

void softmax_rows(double* y, const double* x, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        softmax_row(y + i * cols, x + i * cols, cols);
}

void layernorm_rows(double* y, const double* x, std::size_t rows, std::size_t cols,
                    double eps, double* inv_std) {
    for (std::size_t i = 0; i < rows; ++i)
        layernorm_row(y + i * cols, x + i * cols, cols, eps,
                      inv_std ? inv_std + i : nullptr);
}

void gelu(double* y, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu_grad(double* dx, const double* x, const double* dy, std::size_t n,
               bool accumulate) {
    for (std::size_t i = 0; i < n; ++i) {
        const double g = dy[i] * gelu_grad_one(x[i]);
        dx[i] = accumulate ? dx[i] + g : g;
    }
}

} // namespace serial

} // namespace sled::kernels
