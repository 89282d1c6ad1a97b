#pragma once

#include <cstddef>
#include <vector>

namespace boltznce {

// Row-major dense kernels sized for small MLP layers (dims <= a few hundred).
// A [m x k], B as noted, C [m x n]; all kernels accumulate into C.

/// C += A * B^T   with B stored [n x k]. Row-dot-row; both operands stream
/// contiguously, used for X * W^T in layer forward passes.
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

/// C += A * B     with B stored [k x n]. Used for backprop through weights.
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

/// C += A^T * B   with A stored [k x m], B [k x n]. Used for weight gradients
/// (sum of per-sample outer products).
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

inline void fill_zero(std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); }

}  // namespace boltznce
