#include "boltznce/linalg.hpp"

#include "boltznce/common.hpp"

namespace boltznce {

namespace {
// Rows-per-block for threading. Each output row is written by exactly one
// thread, so results do not depend on the thread count.
constexpr std::size_t kRowGrain = 64;
constexpr std::size_t kParallelFlops = 1u << 21;
}  // namespace

void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    auto body = [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* __restrict ai = a + i * k;
            double* __restrict ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* __restrict bj = b + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
                ci[j] += s;
            }
        }
    };
    if (m * n * k >= kParallelFlops)
        parallel_for(m, kRowGrain, body);
    else
        body(0, m);
}

void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    auto body = [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* __restrict ai = a + i * k;
            double* __restrict ci = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = ai[p];
                const double* __restrict bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
    };
    if (m * n * k >= kParallelFlops)
        parallel_for(m, kRowGrain, body);
    else
        body(0, m);
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    // c[i, j] += sum_p a[p, i] * b[p, j]; parallel over output rows i.
    auto body = [=](std::size_t i0, std::size_t i1) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* __restrict ap = a + p * m;
            const double* __restrict bp = b + p * n;
            for (std::size_t i = i0; i < i1; ++i) {
                const double api = ap[i];
                double* __restrict ci = c + i * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
            }
        }
    };
    if (m * n * k >= kParallelFlops)
        parallel_for(m, 16, body);
    else
        body(0, m);
}

}  // namespace boltznce
