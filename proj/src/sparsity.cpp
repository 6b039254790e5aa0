#include "palora/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "palora/io.hpp"
#include "palora/rng.hpp"
#include "palora/svd.hpp"

namespace palora::sparsity {

void SparsityProfile::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("profile: tau must be in (0,1)");
    if (baseline_accuracy < 0.0 || baseline_accuracy > 1.0)
        throw ConfigError("profile: mu must be in [0,1]");
    for (const LayerSparsity& l : layers) {
        if (l.p_row < 0.0 || l.p_row > 1.0 || l.p_col < 0.0 || l.p_col > 1.0)
            throw ConfigError("profile: rates must be in [0,1]");
        if (l.retained_rows > l.m || l.retained_cols > l.n)
            throw ConfigError("profile: retained counts exceed dimensions");
    }
}

namespace {

// Drop order: worst score first, ties dropping the higher index first, so
// that the retained prefix always equals deterministic_top_indices' keep set.
std::vector<size_t> drop_order(const std::vector<double>& scores) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::reverse(order.begin(), order.end());
    return order;
}

Matrix masked_weight(const Matrix& w, const std::vector<size_t>& row_drop,
                     size_t rows_dropped, const std::vector<size_t>& col_drop,
                     size_t cols_dropped) {
    Matrix out = w;
    for (size_t t = 0; t < rows_dropped; ++t) {
        const size_t i = row_drop[t];
        for (size_t j = 0; j < out.cols; ++j) out.at(i, j) = 0.0;
    }
    for (size_t t = 0; t < cols_dropped; ++t) {
        const size_t j = col_drop[t];
        for (size_t i = 0; i < out.rows; ++i) out.at(i, j) = 0.0;
    }
    return out;
}

double masked_accuracy(const model::BaseModel& m, size_t layer, const Matrix& w_masked,
                       const data::Dataset& d_t) {
    const Matrix logits = model::forward_with_layer_override(m, d_t.inputs, layer, w_masked);
    size_t hits = 0;
    for (size_t j = 0; j < d_t.size(); ++j)
        if (model::argmax_lowest(logits, j) == d_t.labels[j]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(d_t.size());
}

size_t default_step(size_t dim) { return std::max<size_t>(1, (dim + 99) / 100); }

}  // namespace

LayerSparsity derive_layer_sparsity(const model::BaseModel& m, size_t layer,
                                    const data::Dataset& d_t,
                                    const importance::ImportanceScores& scores,
                                    double tau, size_t step) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("derive: tau must be in (0,1)");
    if (layer >= m.layers.size()) throw DimensionError("derive: bad layer index");
    if (scores.granularity != importance::Granularity::row_col)
        throw DimensionError("derive: row/col scores required");
    const Matrix& w = m.layers[layer].W;
    if (scores.row.size() != w.rows || scores.col.size() != w.cols)
        throw DimensionError("derive: score lengths do not match layer shape");
    if (d_t.size() == 0) throw DimensionError("derive: empty dataset");

    const double mu = model::accuracy(m, nullptr, d_t);
    const double floor = tau * mu;
    const std::vector<size_t> row_drop = drop_order(scores.row);
    const std::vector<size_t> col_drop = drop_order(scores.col);
    const size_t step_r = step > 0 ? step : default_step(w.rows);
    const size_t step_c = step > 0 ? step : default_step(w.cols);

    LayerSparsity out;
    out.layer = layer;
    out.m = w.rows;
    out.n = w.cols;

    auto passes = [&](size_t rows_dropped, size_t cols_dropped) {
        const Matrix wm = masked_weight(w, row_drop, rows_dropped, col_drop, cols_dropped);
        return masked_accuracy(m, layer, wm, d_t) >= floor;
    };

    size_t dropped_r = 0;
    size_t dropped_c = 0;
    if (!passes(0, 0)) {
        // Cannot happen for tau < 1 with exact all-ones masking; kept as a
        // guard so callers see full retention flagged instead of nonsense.
        out.retained_rows = w.rows;
        out.retained_cols = w.cols;
        out.threshold_unreachable = true;
        return out;
    }

    bool rows_turn = true;
    bool stopped = false;
    while (!stopped && (dropped_r < w.rows || dropped_c < w.cols)) {
        size_t& dropped = rows_turn ? dropped_r : dropped_c;
        const size_t dim = rows_turn ? w.rows : w.cols;
        const size_t chunk = std::min(rows_turn ? step_r : step_c, dim - dropped);
        if (chunk == 0) {
            rows_turn = !rows_turn;
            continue;
        }
        const size_t cand = dropped + chunk;
        const bool ok = rows_turn ? passes(cand, dropped_c) : passes(dropped_r, cand);
        if (ok) {
            dropped = cand;
            rows_turn = !rows_turn;
            continue;
        }
        // Binary refinement inside the failing chunk: largest extra drop on
        // this axis that still passes. The first failure ends the loop.
        size_t lo = dropped;
        size_t hi = cand;
        while (hi - lo > 1) {
            const size_t mid = lo + (hi - lo) / 2;
            const bool mid_ok = rows_turn ? passes(mid, dropped_c) : passes(dropped_r, mid);
            if (mid_ok)
                lo = mid;
            else
                hi = mid;
        }
        dropped = lo;
        stopped = true;
    }

    out.retained_rows = w.rows - dropped_r;
    out.retained_cols = w.cols - dropped_c;
    out.p_row = static_cast<double>(out.retained_rows) / static_cast<double>(w.rows);
    out.p_col = static_cast<double>(out.retained_cols) / static_cast<double>(w.cols);
    out.element_rate = out.p_row * out.p_col;
    return out;
}

importance::ImportanceScores layer_row_col_scores(const model::BaseModel& m, size_t layer,
                                                  const data::Dataset& d_t,
                                                  importance::Method method,
                                                  const DeriveOptions& opts) {
    const Matrix& w = m.layers[layer].W;
    importance::ImportanceScores scores;
    switch (method) {
        case importance::Method::svd: {
            const std::vector<double> sv = linalg::singular_values(w);
            const size_t k = opts.fixed_k > 0
                                 ? std::min(opts.fixed_k, std::min(w.rows, w.cols))
                                 : linalg::choose_rank_k(sv, opts.k_energy);
            scores = importance::svd_importance(w, k);
            break;
        }
        case importance::Method::snip:
            scores = importance::reduce_to_row_col(importance::snip_importance(m, layer, d_t));
            break;
        case importance::Method::imp:
            scores = importance::reduce_to_row_col(importance::imp_importance(m, layer, d_t));
            break;
    }
    scores.layer = layer;
    scores.dataset_seed = d_t.provenance_seed;
    return scores;
}

SparsityProfile derive_profile(const model::BaseModel& m, const data::Dataset& d_t,
                               importance::Method method, const DeriveOptions& opts) {
    SparsityProfile profile;
    profile.tau = opts.tau;
    profile.method = method;
    profile.dataset_seed = d_t.provenance_seed;
    profile.baseline_accuracy = model::accuracy(m, nullptr, d_t);
    const uint64_t hash_before = model::model_hash(m);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const importance::ImportanceScores scores =
            layer_row_col_scores(m, l, d_t, method, opts);
        profile.layers.push_back(derive_layer_sparsity(m, l, d_t, scores, opts.tau, opts.step));
    }
    if (model::model_hash(m) != hash_before)
        throw NumericError("derive_profile: frozen model mutated");
    profile.validate();
    return profile;
}

namespace {
SparsityProfile rate_profile(double p, size_t depth,
                             const std::vector<std::pair<size_t, size_t>>& dims,
                             bool pyramidal) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("profile rate must be in [0,1]");
    if (pyramidal && !(p > 0.0)) throw ConfigError("pyramidal: p must be in (0,1]");
    if (dims.size() != depth) throw DimensionError("profile: dims/depth mismatch");
    SparsityProfile profile;
    profile.tau = 0.9;  // informational; no derivation happened
    profile.baseline_accuracy = 0.0;
    double rate = 1.0;
    for (size_t l = 0; l < depth; ++l) {
        rate = pyramidal ? rate * p : p;
        LayerSparsity ls;
        ls.layer = l;
        ls.m = dims[l].first;
        ls.n = dims[l].second;
        ls.element_rate = rate;
        const double axis = std::sqrt(rate);
        ls.p_row = axis;
        ls.p_col = axis;
        ls.retained_rows = static_cast<size_t>(std::llround(axis * static_cast<double>(ls.m)));
        ls.retained_cols = static_cast<size_t>(std::llround(axis * static_cast<double>(ls.n)));
        profile.layers.push_back(ls);
    }
    return profile;
}
}  // namespace

SparsityProfile pyramidal_profile(double p, size_t depth,
                                  const std::vector<std::pair<size_t, size_t>>& dims) {
    return rate_profile(p, depth, dims, true);
}

SparsityProfile balanced_profile(double p, size_t depth,
                                 const std::vector<std::pair<size_t, size_t>>& dims) {
    return rate_profile(p, depth, dims, false);
}

adapters::MaskPair invert_mask_pair(const adapters::MaskPair& mask) {
    adapters::MaskPair out = mask;
    for (uint8_t& b : out.u_row) b = b ? 0 : 1;
    for (uint8_t& b : out.u_col) b = b ? 0 : 1;
    out.p_row = 1.0 - mask.p_row;
    out.p_col = 1.0 - mask.p_col;
    return out;
}

MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "partial") return MaskMode::partial;
    if (s == "targeted") return MaskMode::targeted;
    if (s == "stochastic") return MaskMode::stochastic;
    if (s == "inverted") return MaskMode::inverted;
    throw ConfigError("unknown mask mode: " + s);
}

std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::partial: return "partial";
        case MaskMode::targeted: return "targeted";
        case MaskMode::stochastic: return "stochastic";
        case MaskMode::inverted: return "inverted";
    }
    return "?";
}

std::vector<adapters::MaskPair> profile_to_masks(
    const SparsityProfile& profile, MaskMode mode,
    const std::vector<importance::ImportanceScores>* scores, uint64_t seed,
    double temperature) {
    const bool needs_scores = mode != MaskMode::partial;
    if (needs_scores && (!scores || scores->size() != profile.layers.size()))
        throw ConfigError("profile_to_masks: mode " + to_string(mode) +
                          " needs per-layer scores");
    std::vector<adapters::MaskPair> masks;
    for (size_t l = 0; l < profile.layers.size(); ++l) {
        const LayerSparsity& ls = profile.layers[l];
        switch (mode) {
            case MaskMode::partial:
                masks.push_back(adapters::sample_mask_pair(ls.m, ls.n, ls.p_row, ls.p_col,
                                                           mix_seed(seed, l)));
                break;
            case MaskMode::targeted:
                masks.push_back(importance::deterministic_top_indices(
                    (*scores)[l], ls.retained_rows, ls.retained_cols));
                break;
            case MaskMode::stochastic:
                masks.push_back(importance::stochastic_indices(
                    (*scores)[l], ls.retained_rows, ls.retained_cols, temperature,
                    mix_seed(seed, l)));
                break;
            case MaskMode::inverted:
                masks.push_back(invert_mask_pair(importance::deterministic_top_indices(
                    (*scores)[l], ls.retained_rows, ls.retained_cols)));
                break;
        }
    }
    return masks;
}

std::string profile_to_text(const SparsityProfile& profile) {
    std::ostringstream os;
    char buf[64];
    auto g = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "palora-profile v1\n";
    os << "# layer m n retained_rows retained_cols p_row p_col element_rate tau mu "
          "method seed flags\n";
    for (const LayerSparsity& l : profile.layers) {
        os << l.layer << ' ' << l.m << ' ' << l.n << ' ' << l.retained_rows << ' '
           << l.retained_cols << ' ' << g(l.p_row) << ' ' << g(l.p_col) << ' '
           << g(l.element_rate) << ' ' << g(profile.tau) << ' '
           << g(profile.baseline_accuracy) << ' ' << importance::to_string(profile.method)
           << ' ' << profile.dataset_seed << ' ' << (l.threshold_unreachable ? 1 : 0)
           << '\n';
    }
    return os.str();
}

SparsityProfile profile_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "palora-profile v1")
        throw IoError("profile: bad header");
    SparsityProfile profile;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LayerSparsity l;
        std::string method;
        double tau = 0.0, mu = 0.0;
        uint64_t seed = 0;
        int flags = 0;
        if (!(ls >> l.layer >> l.m >> l.n >> l.retained_rows >> l.retained_cols >>
              l.p_row >> l.p_col >> l.element_rate >> tau >> mu >> method >> seed >> flags))
            throw IoError("profile: malformed record: " + line);
        l.threshold_unreachable = flags != 0;
        if (first) {
            profile.tau = tau;
            profile.baseline_accuracy = mu;
            profile.method = importance::method_from_string(method);
            profile.dataset_seed = seed;
            first = false;
        } else if (tau != profile.tau || mu != profile.baseline_accuracy ||
                   seed != profile.dataset_seed ||
                   importance::method_from_string(method) != profile.method) {
            throw IoError("profile: inconsistent per-layer metadata");
        }
        profile.layers.push_back(l);
    }
    if (profile.layers.empty()) throw IoError("profile: no records");
    profile.validate();
    return profile;
}

void save_profile(const std::string& path, const SparsityProfile& profile) {
    io::write_file(path, profile_to_text(profile));
}

SparsityProfile load_profile(const std::string& path) {
    return profile_from_text(io::read_file(path));
}

}  // namespace palora::sparsity
