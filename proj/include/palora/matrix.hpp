#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "palora/common.hpp"

namespace palora {

// Dense row-major 64-bit real matrix. The universal numeric carrier: weights,
// adapter factors, activations, batches (samples are columns) all live here.
// Copies on slice; no views or strides.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(size_t r, size_t c, std::vector<double> d);

    static Matrix zeros(size_t r, size_t c) { return Matrix(r, c); }
    static Matrix full(size_t r, size_t c, double v);
    static Matrix identity(size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    double& at(size_t i, size_t j) { return data[i * cols + j]; }
    double at(size_t i, size_t j) const { return data[i * cols + j]; }
    size_t size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

};

void ensure_finite(const Matrix& m, const char* what);
bool all_finite(const Matrix& m);
uint64_t matrix_hash(const Matrix& m, uint64_t h = kFnvOffset);

// Untracked (inference-path) ops. Tape ops produce bitwise-identical values
// since both route through the same kernels.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix transpose(const Matrix& a);
Matrix add_bias(const Matrix& a, const Matrix& bias);  // bias is rows x 1, added per column
Matrix relu(const Matrix& a);
Matrix gelu(const Matrix& a);       // tanh approximation
Matrix gelu_grad(const Matrix& a);  // exact derivative of the approximation

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

double frobenius_norm(const Matrix& a);
double inf_norm(const Matrix& a);   // max absolute row sum
double sum(const Matrix& a);
double max_abs(const Matrix& a);

// Column-wise softmax (classes are rows, samples are columns).
Matrix softmax_columns(const Matrix& logits);

}  // namespace palora
