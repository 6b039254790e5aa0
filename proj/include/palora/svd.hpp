#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "palora/matrix.hpp"

namespace palora::linalg {

// Rank-k factorization W ~ P_k diag(S_k) Q_k with P_k m x k (orthonormal
// columns), S_k descending nonnegative, Q_k k x n (orthonormal rows).
struct TruncatedSvd {
    Matrix P_k;
    std::vector<double> S_k;
    Matrix Q_k;
    size_t k = 0;
};

struct SvdOptions {
    size_t max_sweeps = 60;
    double off_diag_tol = 1e-12;
};

// One-sided Jacobi on the smaller dimension. Deterministic: each left
// singular vector is signed so its largest-magnitude entry (first on ties)
// is positive. Throws ConvergenceError if the sweep cap is exhausted.
TruncatedSvd truncated_svd(const Matrix& w, size_t k, const SvdOptions& opts = {});

// Full decomposition (k = min(m, n)); singular values only convenience.
std::vector<double> singular_values(const Matrix& w, const SvdOptions& opts = {});

// Row scores: squared L2 norms of P_k rows. Column scores: squared L2 norms
// of Q_k columns. Each in [0,1]; row scores sum to k, as do column scores.
std::pair<std::vector<double>, std::vector<double>> leverage_scores(const TruncatedSvd& svd);

// Smallest k whose leading singular values carry `energy` of total squared
// spectral mass.
size_t choose_rank_k(const std::vector<double>& singular_values_desc, double energy);

Matrix reconstruct(const TruncatedSvd& svd);

}  // namespace palora::linalg
