#include <cstring>

#include "palora/kernels.hpp"

// Reference kernels. Compiled with -ffp-contract=off so the compiler cannot
// fuse mul+add; the AVX2 variants use explicit mul/add intrinsics and must
// match these bit for bit.

namespace palora::kernels::scalar {

void add(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void hadamard(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] * s;
}

void axpy(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void relu(const double* x, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* x, const double* g, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void matmul(const double* a, const double* b, double* c,
            size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
        }
    }
}

extern const Ops kOps;
const Ops kOps = {add, sub, hadamard, scale, axpy, relu, relu_grad, matmul};

}  // namespace palora::kernels::scalar
