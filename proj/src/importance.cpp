#include "palora/importance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "palora/rng.hpp"
#include "palora/svd.hpp"
#include "palora/tape.hpp"

namespace palora::importance {

Method method_from_string(const std::string& s) {
    if (s == "svd") return Method::svd;
    if (s == "snip") return Method::snip;
    if (s == "imp") return Method::imp;
    throw ConfigError("unknown importance method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::svd: return "svd";
        case Method::snip: return "snip";
        case Method::imp: return "imp";
    }
    return "?";
}

void ImportanceScores::validate() const {
    auto check = [](double v) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw NumericError("importance score must be finite and >= 0");
    };
    if (granularity == Granularity::element) {
        if (element.size() == 0) throw DimensionError("element scores missing");
        for (double v : element.data) check(v);
    } else {
        if (row.empty() || col.empty()) throw DimensionError("row/col scores missing");
        for (double v : row) check(v);
        for (double v : col) check(v);
    }
}

ImportanceScores svd_importance(const Matrix& w, size_t k) {
    const linalg::TruncatedSvd svd = linalg::truncated_svd(w, k);
    auto [rs, cs] = linalg::leverage_scores(svd);
    ImportanceScores s;
    s.granularity = Granularity::row_col;
    s.method = Method::svd;
    s.row = std::move(rs);
    s.col = std::move(cs);
    s.validate();
    return s;
}

namespace {

// Gradient of the summed cross-entropy w.r.t. layer `layer`'s weights,
// computed on a throwaway tape.
Matrix layer_loss_gradient(const model::BaseModel& m, size_t layer,
                           const data::Dataset& batch) {
    if (batch.size() == 0) throw DimensionError("importance: empty batch");
    if (layer >= m.layers.size()) throw DimensionError("importance: bad layer index");
    Tape tape;
    NodeId h = tape.constant(batch.inputs);
    NodeId tracked = -1;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const model::FrozenLayer& fl = m.layers[l];
        NodeId w = tape.leaf(fl.W, l == layer);
        if (l == layer) tracked = w;
        NodeId z = tape.add_bias(tape.matmul(w, h), tape.constant(fl.b));
        switch (fl.activation) {
            case model::Activation::relu: h = tape.relu(z); break;
            case model::Activation::gelu: h = tape.gelu(z); break;
            case model::Activation::identity: h = z; break;
        }
    }
    NodeId loss = tape.softmax_cross_entropy(h, batch.labels, Reduction::sum);
    tape.backward(loss);
    return tape.grad(tracked);
}

}  // namespace

ImportanceScores snip_importance(const model::BaseModel& m, size_t layer,
                                 const data::Dataset& batch) {
    Matrix g = layer_loss_gradient(m, layer, batch);
    for (double& v : g.data) v = std::fabs(v);
    ImportanceScores s;
    s.layer = layer;
    s.granularity = Granularity::element;
    s.method = Method::snip;
    s.element = std::move(g);
    s.validate();
    return s;
}

ImportanceScores imp_importance(const model::BaseModel& m, size_t layer,
                                const data::Dataset& batch) {
    Matrix g = layer_loss_gradient(m, layer, batch);
    const Matrix& w = m.layers[layer].W;
    for (size_t i = 0; i < g.size(); ++i) g.data[i] = std::fabs(w.data[i] * g.data[i]);
    ImportanceScores s;
    s.layer = layer;
    s.granularity = Granularity::element;
    s.method = Method::imp;
    s.element = std::move(g);
    s.validate();
    return s;
}

ImportanceScores reduce_to_row_col(const ImportanceScores& scores) {
    if (scores.granularity != Granularity::element)
        throw DimensionError("reduce_to_row_col: element granularity required");
    ImportanceScores out;
    out.layer = scores.layer;
    out.granularity = Granularity::row_col;
    out.method = scores.method;
    out.dataset_seed = scores.dataset_seed;
    out.dataset_id = scores.dataset_id;
    out.row.assign(scores.element.rows, 0.0);
    out.col.assign(scores.element.cols, 0.0);
    for (size_t i = 0; i < scores.element.rows; ++i)
        for (size_t j = 0; j < scores.element.cols; ++j) {
            const double v = scores.element.at(i, j);
            out.row[i] += v;
            out.col[j] += v;
        }
    out.validate();
    return out;
}

namespace {

// Indices ordered by (score desc, index asc); the keep-priority order shared
// by the deterministic selector and the sparsity derivation.
std::vector<size_t> keep_order(const std::vector<double>& scores) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<uint8_t> top_bits(const std::vector<double>& scores, size_t count) {
    if (count > scores.size())
        throw DimensionError("top indices: count exceeds dimension");
    std::vector<uint8_t> bits(scores.size(), 0);
    const std::vector<size_t> order = keep_order(scores);
    for (size_t i = 0; i < count; ++i) bits[order[i]] = 1;
    return bits;
}

// Without-replacement softmax sampling at the given temperature.
std::vector<uint8_t> softmax_sample_bits(const std::vector<double>& scores, size_t count,
                                         double temperature, Rng& rng) {
    if (count > scores.size())
        throw DimensionError("stochastic indices: count exceeds dimension");
    std::vector<uint8_t> bits(scores.size(), 0);
    std::vector<size_t> remaining(scores.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    for (size_t pick = 0; pick < count; ++pick) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t idx : remaining) mx = std::max(mx, scores[idx] / temperature);
        std::vector<double> weights(remaining.size());
        for (size_t i = 0; i < remaining.size(); ++i)
            weights[i] = std::exp(scores[remaining[i]] / temperature - mx);
        const size_t chosen = rng.categorical(weights);
        bits[remaining[chosen]] = 1;
        remaining.erase(remaining.begin() + static_cast<long>(chosen));
    }
    return bits;
}

}  // namespace

adapters::MaskPair deterministic_top_indices(const ImportanceScores& scores,
                                             size_t count_row, size_t count_col) {
    if (scores.granularity != Granularity::row_col)
        throw DimensionError("deterministic_top_indices: row_col granularity required");
    adapters::MaskPair mask;
    mask.u_row = top_bits(scores.row, count_row);
    mask.u_col = top_bits(scores.col, count_col);
    mask.p_row = scores.row.empty() ? 0.0
                                    : static_cast<double>(count_row) /
                                          static_cast<double>(scores.row.size());
    mask.p_col = scores.col.empty() ? 0.0
                                    : static_cast<double>(count_col) /
                                          static_cast<double>(scores.col.size());
    return mask;
}

adapters::MaskPair stochastic_indices(const ImportanceScores& scores, size_t count_row,
                                      size_t count_col, double temperature, uint64_t seed) {
    if (!(temperature > 0.0))
        throw ConfigError("stochastic_indices: temperature must be > 0");
    if (scores.granularity != Granularity::row_col)
        throw DimensionError("stochastic_indices: row_col granularity required");
    Rng rng(seed);
    adapters::MaskPair mask;
    mask.u_row = softmax_sample_bits(scores.row, count_row, temperature, rng);
    mask.u_col = softmax_sample_bits(scores.col, count_col, temperature, rng);
    mask.p_row = scores.row.empty() ? 0.0
                                    : static_cast<double>(count_row) /
                                          static_cast<double>(scores.row.size());
    mask.p_col = scores.col.empty() ? 0.0
                                    : static_cast<double>(count_col) /
                                          static_cast<double>(scores.col.size());
    mask.seed = seed;
    return mask;
}

std::vector<ImportanceScores> flow_reweigh(const std::vector<ImportanceScores>& per_layer) {
    for (const ImportanceScores& s : per_layer)
        if (s.granularity != Granularity::element)
            throw DimensionError("flow_reweigh: element granularity required");
    for (size_t l = 0; l + 1 < per_layer.size(); ++l)
        if (per_layer[l + 1].element.cols != per_layer[l].element.rows)
            throw DimensionError("flow_reweigh: layer " + std::to_string(l + 1) +
                                 " input dim != layer " + std::to_string(l) + " output dim");

    std::vector<ImportanceScores> out = per_layer;
    for (size_t l = 0; l + 1 < per_layer.size(); ++l) {
        const Matrix& next = per_layer[l + 1].element;
        std::vector<double> incoming(next.cols, 0.0);
        double incoming_total = 0.0;
        for (size_t i = 0; i < next.rows; ++i)
            for (size_t j = 0; j < next.cols; ++j) {
                incoming[j] += next.at(i, j);
                incoming_total += next.at(i, j);
            }
        if (incoming_total == 0.0) continue;  // nothing flows back

        const Matrix& cur = per_layer[l].element;
        double cur_mean = 0.0;
        for (double v : cur.data) cur_mean += v;
        cur_mean /= static_cast<double>(cur.size());
        const double incoming_mean = incoming_total / static_cast<double>(incoming.size());
        const double rescale = incoming_mean > 0.0 ? cur_mean / incoming_mean : 0.0;

        Matrix& dst = out[l].element;
        for (size_t i = 0; i < dst.rows; ++i) {
            const double addend = incoming[i] * rescale;
            for (size_t j = 0; j < dst.cols; ++j) dst.at(i, j) += addend;
        }
        out[l].validate();
    }
    return out;
}

void write_scores_csv(const std::string& path, const std::vector<ImportanceScores>& scores) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "layer,kind,index,score,method,seed\n";
    char buf[64];
    auto emit = [&](size_t layer, const char* kind, size_t idx, double v,
                    const std::string& method, uint64_t seed) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << layer << ',' << kind << ',' << idx << ',' << buf << ',' << method << ','
           << seed << '\n';
    };
    for (const ImportanceScores& s : scores) {
        if (s.granularity == Granularity::row_col) {
            for (size_t i = 0; i < s.row.size(); ++i)
                emit(s.layer, "row", i, s.row[i], to_string(s.method), s.dataset_seed);
            for (size_t j = 0; j < s.col.size(); ++j)
                emit(s.layer, "col", j, s.col[j], to_string(s.method), s.dataset_seed);
        } else {
            for (size_t i = 0; i < s.element.rows; ++i)
                for (size_t j = 0; j < s.element.cols; ++j)
                    emit(s.layer, "element", i * s.element.cols + j, s.element.at(i, j),
                         to_string(s.method), s.dataset_seed);
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace palora::importance
