#include "palora/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace palora::linalg {

namespace {

// One-sided Jacobi: orthogonalize the columns of G in place by plane
// rotations, accumulating them into V. On return G = U * diag(s) with
// orthogonal U (columns of G normalized) and G_in = U diag(s) V^T.
void jacobi_orthogonalize(Matrix& g, Matrix& v, const SvdOptions& opts) {
    const size_t n = g.cols;
    const size_t m = g.rows;
    if (n < 2) return;
    for (size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        double worst = 0.0;
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (size_t i = 0; i < m; ++i) {
                    const double gp = g.at(i, p);
                    const double gq = g.at(i, q);
                    app += gp * gp;
                    aqq += gq * gq;
                    apq += gp * gq;
                }
                const double denom = std::sqrt(app * aqq);
                const double off = denom > 0.0 ? std::fabs(apq) / denom : 0.0;
                worst = std::max(worst, off);
                if (off <= opts.off_diag_tol) continue;

                // Rotation zeroing the (p,q) inner product.
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (size_t i = 0; i < m; ++i) {
                    const double gp = g.at(i, p);
                    const double gq = g.at(i, q);
                    g.at(i, p) = c * gp - s * gq;
                    g.at(i, q) = s * gp + c * gq;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double vp = v.at(i, p);
                    const double vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (worst <= opts.off_diag_tol) return;
    }
    // Measure the residual for the error message.
    double residual = 0.0;
    for (size_t p = 0; p + 1 < n; ++p)
        for (size_t q = p + 1; q < n; ++q) {
            double app = 0.0, aqq = 0.0, apq = 0.0;
            for (size_t i = 0; i < m; ++i) {
                app += g.at(i, p) * g.at(i, p);
                aqq += g.at(i, q) * g.at(i, q);
                apq += g.at(i, p) * g.at(i, q);
            }
            const double denom = std::sqrt(app * aqq);
            if (denom > 0.0) residual = std::max(residual, std::fabs(apq) / denom);
        }
    throw ConvergenceError("jacobi svd: no convergence after " +
                           std::to_string(opts.max_sweeps) +
                           " sweeps, worst off-diagonal " + std::to_string(residual));
}

// Full SVD of tall-or-square W (m >= n): W = U diag(s) V^T, singular values
// descending, U m x n, V n x n.
void full_svd_tall(const Matrix& w, Matrix& u, std::vector<double>& s, Matrix& v,
                   const SvdOptions& opts) {
    const size_t m = w.rows;
    const size_t n = w.cols;
    Matrix g = w;
    v = Matrix::identity(n);
    jacobi_orthogonalize(g, v, opts);

    s.assign(n, 0.0);
    for (size_t j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (size_t i = 0; i < m; ++i) norm2 += g.at(i, j) * g.at(i, j);
        s[j] = std::sqrt(norm2);
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return s[a] > s[b]; });

    Matrix g_sorted(m, n), v_sorted(n, n);
    std::vector<double> s_sorted(n);
    for (size_t j = 0; j < n; ++j) {
        const size_t src = order[j];
        s_sorted[j] = s[src];
        for (size_t i = 0; i < m; ++i) g_sorted.at(i, j) = g.at(i, src);
        for (size_t i = 0; i < n; ++i) v_sorted.at(i, j) = v.at(i, src);
    }
    s = std::move(s_sorted);

    u = Matrix(m, n);
    for (size_t j = 0; j < n; ++j) {
        if (s[j] > 0.0) {
            for (size_t i = 0; i < m; ++i) u.at(i, j) = g_sorted.at(i, j) / s[j];
        } else {
            // Zero singular value: complete the basis with the canonical
            // vector least represented by the leading columns, re-orthogonalized.
            std::vector<double> cand(m, 0.0);
            size_t pick = 0;
            double best = -1.0;
            for (size_t e = 0; e < m; ++e) {
                double repr = 0.0;
                for (size_t jj = 0; jj < j; ++jj) repr += u.at(e, jj) * u.at(e, jj);
                const double gap = 1.0 - repr;
                if (gap > best + 1e-15) {
                    best = gap;
                    pick = e;
                }
            }
            cand[pick] = 1.0;
            for (size_t jj = 0; jj < j; ++jj) {
                double dot = 0.0;
                for (size_t i = 0; i < m; ++i) dot += cand[i] * u.at(i, jj);
                for (size_t i = 0; i < m; ++i) cand[i] -= dot * u.at(i, jj);
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) throw NumericError("svd: basis completion failed");
            for (size_t i = 0; i < m; ++i) u.at(i, j) = cand[i] / norm;
        }
    }
    v = std::move(v_sorted);
}

void apply_sign_convention(Matrix& u, Matrix& v) {
    for (size_t j = 0; j < u.cols; ++j) {
        size_t arg = 0;
        double best = std::fabs(u.at(0, j));
        for (size_t i = 1; i < u.rows; ++i) {
            const double a = std::fabs(u.at(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (u.at(arg, j) < 0.0) {
            for (size_t i = 0; i < u.rows; ++i) u.at(i, j) = -u.at(i, j);
            for (size_t i = 0; i < v.rows; ++i) v.at(i, j) = -v.at(i, j);
        }
    }
}

}  // namespace

TruncatedSvd truncated_svd(const Matrix& w, size_t k, const SvdOptions& opts) {
    const size_t m = w.rows;
    const size_t n = w.cols;
    if (m == 0 || n == 0) throw DimensionError("truncated_svd: empty matrix");
    const size_t kmax = std::min(m, n);
    if (k < 1 || k > kmax)
        throw DimensionError("truncated_svd: k=" + std::to_string(k) +
                             " outside [1," + std::to_string(kmax) + "]");
    ensure_finite(w, "truncated_svd input");

    Matrix u, v;
    std::vector<double> s;
    if (m >= n) {
        full_svd_tall(w, u, s, v, opts);
    } else {
        // Work on the transpose so Jacobi runs on the smaller dimension,
        // then swap roles: W^T = U' S V'^T implies W = V' S U'^T.
        Matrix ut, vt;
        full_svd_tall(transpose(w), ut, s, vt, opts);
        u = std::move(vt);
        v = std::move(ut);
    }
    apply_sign_convention(u, v);

    TruncatedSvd out;
    out.k = k;
    out.P_k = Matrix(m, k);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < k; ++j) out.P_k.at(i, j) = u.at(i, j);
    out.S_k.assign(s.begin(), s.begin() + static_cast<long>(k));
    out.Q_k = Matrix(k, n);
    for (size_t j = 0; j < k; ++j)
        for (size_t i = 0; i < n; ++i) out.Q_k.at(j, i) = v.at(i, j);
    return out;
}

std::vector<double> singular_values(const Matrix& w, const SvdOptions& opts) {
    return truncated_svd(w, std::min(w.rows, w.cols), opts).S_k;
}

std::pair<std::vector<double>, std::vector<double>> leverage_scores(const TruncatedSvd& svd) {
    std::vector<double> row_scores(svd.P_k.rows, 0.0);
    for (size_t i = 0; i < svd.P_k.rows; ++i)
        for (size_t j = 0; j < svd.k; ++j)
            row_scores[i] += svd.P_k.at(i, j) * svd.P_k.at(i, j);
    std::vector<double> col_scores(svd.Q_k.cols, 0.0);
    for (size_t j = 0; j < svd.Q_k.cols; ++j)
        for (size_t i = 0; i < svd.k; ++i)
            col_scores[j] += svd.Q_k.at(i, j) * svd.Q_k.at(i, j);
    return {std::move(row_scores), std::move(col_scores)};
}

size_t choose_rank_k(const std::vector<double>& sv, double energy) {
    if (sv.empty()) throw DimensionError("choose_rank_k: empty spectrum");
    if (!(energy > 0.0 && energy <= 1.0))
        throw ConfigError("choose_rank_k: energy must be in (0,1]");
    double total = 0.0;
    for (double s : sv) total += s * s;
    const double target = energy * total;
    double acc = 0.0;
    for (size_t k = 0; k < sv.size(); ++k) {
        acc += sv[k] * sv[k];
        if (acc >= target) return k + 1;
    }
    return sv.size();
}

Matrix reconstruct(const TruncatedSvd& svd) {
    Matrix ps = svd.P_k;
    for (size_t i = 0; i < ps.rows; ++i)
        for (size_t j = 0; j < svd.k; ++j) ps.at(i, j) *= svd.S_k[j];
    return matmul(ps, svd.Q_k);
}

}  // namespace palora::linalg
