#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "palora/kernels.hpp"
#include "palora/rng.hpp"

using namespace palora;

namespace {

bool bitwise_equal(const double* a, const double* b, size_t n) {
    return std::memcmp(a, b, n * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("avx2 variants are bit-identical to the scalar reference") {
    if (!kernels::backend_available(kernels::Backend::avx2)) {
        MESSAGE("AVX2 unavailable, skipping equivalence check");
        return;
    }
    const kernels::Ops& s = kernels::ops_for(kernels::Backend::scalar);
    const kernels::Ops& v = kernels::ops_for(kernels::Backend::avx2);
    Rng rng(42);
    // Ragged sizes exercise both the vector body and the scalar tail.
    for (size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 1000u, 1023u}) {
        std::vector<double> a(n), b(n), out_s(n), out_v(n);
        for (size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform(-50.0, 50.0);
            b[i] = rng.uniform(-50.0, 50.0);
        }
        a[0] = 0.0;
        if (n > 2) b[2] = -0.0;

        s.add(a.data(), b.data(), out_s.data(), n);
        v.add(a.data(), b.data(), out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));

        s.sub(a.data(), b.data(), out_s.data(), n);
        v.sub(a.data(), b.data(), out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));

        s.hadamard(a.data(), b.data(), out_s.data(), n);
        v.hadamard(a.data(), b.data(), out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));

        s.scale(a.data(), 1.7, out_s.data(), n);
        v.scale(a.data(), 1.7, out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));

        std::vector<double> ys = b, yv = b;
        s.axpy(-0.3, a.data(), ys.data(), n);
        v.axpy(-0.3, a.data(), yv.data(), n);
        CHECK(bitwise_equal(ys.data(), yv.data(), n));

        s.relu(a.data(), out_s.data(), n);
        v.relu(a.data(), out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));

        s.relu_grad(a.data(), b.data(), out_s.data(), n);
        v.relu_grad(a.data(), b.data(), out_v.data(), n);
        CHECK(bitwise_equal(out_s.data(), out_v.data(), n));
    }
}

TEST_CASE("matmul backends agree bitwise on ragged shapes") {
    if (!kernels::backend_available(kernels::Backend::avx2)) return;
    const kernels::Ops& s = kernels::ops_for(kernels::Backend::scalar);
    const kernels::Ops& v = kernels::ops_for(kernels::Backend::avx2);
    Rng rng(7);
    const size_t shapes[][3] = {{1, 1, 1}, {2, 3, 5}, {3, 4, 2}, {5, 5, 5},
                                {7, 11, 13}, {16, 16, 16}, {9, 1, 17}, {8, 32, 6}};
    for (const auto& sh : shapes) {
        const size_t m = sh[0], k = sh[1], n = sh[2];
        std::vector<double> a(m * k), b(k * n), cs(m * n), cv(m * n);
        for (double& x : a) x = rng.uniform(-2.0, 2.0);
        for (double& x : b) x = rng.uniform(-2.0, 2.0);
        s.matmul(a.data(), b.data(), cs.data(), m, k, n);
        v.matmul(a.data(), b.data(), cv.data(), m, k, n);
        CHECK(bitwise_equal(cs.data(), cv.data(), m * n));
    }
}

TEST_CASE("scalar matmul matches the naive triple loop exactly") {
    Rng rng(3);
    Matrix a = oracles::random_matrix(6, 9, rng);
    Matrix b = oracles::random_matrix(9, 4, rng);
    Matrix c(6, 4);
    kernels::ops_for(kernels::Backend::scalar)
        .matmul(a.data.data(), b.data.data(), c.data.data(), 6, 9, 4);
    const Matrix want = oracles::naive_matmul(a, b);
    CHECK(oracles::max_rel_error(c, want) < 1e-12);
}

TEST_CASE("backend selection reports and can be forced") {
    const kernels::Backend prev = kernels::active_backend();
    kernels::set_backend(kernels::Backend::scalar);
    CHECK(kernels::active_backend() == kernels::Backend::scalar);
    CHECK(std::string(kernels::backend_name(kernels::active_backend())) == "scalar");
    kernels::set_backend(prev);
}

}  // TEST_SUITE
