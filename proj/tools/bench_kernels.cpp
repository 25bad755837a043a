// Times the OpenMP kernels against their serial reference twins at
// transformer-block operand sizes and verifies bit-equality.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sled/kernels.hpp"
#include "sled/rng.hpp"

using namespace sled;
namespace k = sled::kernels;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_matmul(const char* name, std::size_t m, std::size_t kk, std::size_t n,
                  int reps) {
    Rng rng(42);
    const auto a = random_vec(m * kk, rng);
    const auto b = random_vec(kk * n, rng);
    std::vector<double> c_par(m * n), c_ser(m * n);

    const double par = time_ms([&] { k::mm_nn(c_par.data(), a.data(), b.data(), m, kk, n); }, reps);
    const double ser = time_ms([&] { k::serial::mm_nn(c_ser.data(), a.data(), b.data(), m, kk, n); }, reps);
    const bool equal = c_par == c_ser;
    const double gmacs = static_cast<double>(m) * kk * n / 1e6; // per ms at 1 GMAC/s
    std::printf("%-22s %4zux%-4zux%-4zu serial %8.3f ms (%6.2f GMAC/s)  omp %8.3f ms (%6.2f GMAC/s)  speedup %.2fx  bit-equal %s\n",
                name, m, kk, n, ser, gmacs / ser, par, gmacs / par, ser / par,
                equal ? "yes" : "NO");
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both columns run serial code\n");
#endif
    // projection, attention-score and FFN shapes of the default model
    bench_matmul("projection", 152, 64, 64, 200);
    bench_matmul("attention-scores", 152, 16, 152, 200);
    bench_matmul("ffn", 152, 64, 128, 200);
    bench_matmul("large-square", 512, 512, 512, 4);

    Rng rng(7);
    const std::size_t rows = 608, cols = 128;
    const auto x = random_vec(rows * cols, rng);
    std::vector<double> y_par(rows * cols), y_ser(rows * cols);
    const double sm_par = time_ms([&] { k::softmax_rows(y_par.data(), x.data(), rows, cols); }, 500);
    const double sm_ser = time_ms([&] { k::serial::softmax_rows(y_ser.data(), x.data(), rows, cols); }, 500);
    std::printf("%-22s %4zux%-9zu serial %8.3f ms                 omp %8.3f ms                 speedup %.2fx  bit-equal %s\n",
                "softmax-rows", rows, cols, sm_ser, sm_par, sm_ser / sm_par,
                y_par == y_ser ? "yes" : "NO");
    return 0;
}
