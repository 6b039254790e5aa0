#pragma once

#include <cstddef>
#include <string>

namespace palora::kernels {

// Data-parallel inner loops behind Matrix and the optimizer. Every op has a
// scalar reference kernel and (on x86-64 with AVX2) a vector variant selected
// at runtime. Variants are required to be bit-identical to the scalar
// reference: matmul accumulates in ikj order with separate mul/add (no FMA),
// so each output element sees the same operation sequence on every backend.
// Ops whose vectorization would reorder reductions (sum, dot) stay scalar.

enum class Backend { scalar, avx2 };

Backend active_backend();
void set_backend(Backend b);    // throws if the backend is unsupported here
Backend detect_backend();       // CPU detection + PALORA_KERNELS override
bool backend_available(Backend b);
const char* backend_name(Backend b);

struct Ops {
    void (*add)(const double* a, const double* b, double* dst, size_t n);
    void (*sub)(const double* a, const double* b, double* dst, size_t n);
    void (*hadamard)(const double* a, const double* b, double* dst, size_t n);
    void (*scale)(const double* a, double s, double* dst, size_t n);
    void (*axpy)(double alpha, const double* x, double* y, size_t n);
    void (*relu)(const double* x, double* dst, size_t n);
    void (*relu_grad)(const double* x, const double* g, double* dst, size_t n);
    // c (m*n) = a (m*k) times b (k*n), row-major; c is overwritten.
    void (*matmul)(const double* a, const double* b, double* c,
                   size_t m, size_t k, size_t n);
};

const Ops& ops();                    // active backend
const Ops& ops_for(Backend b);       // explicit backend (tests)

}  // namespace palora::kernels
