#include "palora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "palora/kernels.hpp"

namespace palora {

Matrix::Matrix(size_t r, size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
        throw DimensionError("Matrix: data length " + std::to_string(data.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix Matrix::full(size_t r, size_t c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
    const size_t r = rows_init.size();
    const size_t c = r == 0 ? 0 : rows_init.begin()->size();
    Matrix m(r, c);
    size_t i = 0;
    for (const auto& row : rows_init) {
        if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
        size_t j = 0;
        for (double v : row) m.at(i, j++) = v;
        ++i;
    }
    return m;
}

bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

void ensure_finite(const Matrix& m, const char* what) {
    if (!all_finite(m))
        throw NumericError(std::string("non-finite value in ") + what);
}

uint64_t matrix_hash(const Matrix& m, uint64_t h) {
    h = fnv1a_u64(m.rows, h);
    h = fnv1a_u64(m.cols, h);
    return fnv1a(m.data.data(), m.data.size() * sizeof(double), h);
}

namespace {
void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                             std::to_string(b.rows) + "x" + std::to_string(b.cols));
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols) +
                             " vs " + std::to_string(b.rows));
    Matrix c(a.rows, b.cols);
    kernels::ops().matmul(a.data.data(), b.data.data(), c.data.data(),
                          a.rows, a.cols, b.cols);
    ensure_finite(c, "matmul");
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c(a.rows, a.cols);
    kernels::ops().add(a.data.data(), b.data.data(), c.data.data(), a.size());
    ensure_finite(c, "add");
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c(a.rows, a.cols);
    kernels::ops().sub(a.data.data(), b.data.data(), c.data.data(), a.size());
    ensure_finite(c, "sub");
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c(a.rows, a.cols);
    kernels::ops().hadamard(a.data.data(), b.data.data(), c.data.data(), a.size());
    ensure_finite(c, "hadamard");
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows, a.cols);
    kernels::ops().scale(a.data.data(), s, c.data.data(), a.size());
    ensure_finite(c, "scale");
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Matrix add_bias(const Matrix& a, const Matrix& bias) {
    if (bias.rows != a.rows || bias.cols != 1)
        throw DimensionError("add_bias: bias must be " + std::to_string(a.rows) + "x1");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        const double bi = bias.at(i, 0);
        for (size_t j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j) + bi;
    }
    ensure_finite(c, "add_bias");
    return c;
}

Matrix relu(const Matrix& a) {
    Matrix c(a.rows, a.cols);
    kernels::ops().relu(a.data.data(), c.data.data(), a.size());
    return c;
}

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687637369517;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

double gelu_scalar(double x) {
    const double u = kGeluC * (x + kGeluK * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
    const double u = kGeluC * (x + kGeluK * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluK * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Matrix gelu(const Matrix& a) {
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = gelu_scalar(a.data[i]);
    ensure_finite(c, "gelu");
    return c;
}

Matrix gelu_grad(const Matrix& a) {
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = gelu_grad_scalar(a.data[i]);
    ensure_finite(c, "gelu_grad");
    return c;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

double inf_norm(const Matrix& a) {
    double best = 0.0;
    for (size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < a.cols; ++j) s += std::fabs(a.at(i, j));
        if (s > best) best = s;
    }
    return best;
}

double sum(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return s;
}

double max_abs(const Matrix& a) {
    double best = 0.0;
    for (double v : a.data) best = std::max(best, std::fabs(v));
    return best;
}

Matrix softmax_columns(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (size_t j = 0; j < logits.cols; ++j) {
        double mx = logits.at(0, j);
        for (size_t i = 1; i < logits.rows; ++i) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (size_t i = 0; i < logits.rows; ++i) {
            const double e = std::exp(logits.at(i, j) - mx);
            p.at(i, j) = e;
            z += e;
        }
        for (size_t i = 0; i < logits.rows; ++i) p.at(i, j) /= z;
    }
    ensure_finite(p, "softmax");
    return p;
}

}  // namespace palora
