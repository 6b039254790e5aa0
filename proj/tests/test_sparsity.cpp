#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "palora/sparsity.hpp"

using namespace palora;
using namespace palora::sparsity;

namespace {

// Two layers; layer 0 is rank-1 with all mass at (0,0), the rest identity.
// Accuracy depends entirely on the (0,0) path.
model::BaseModel rank1_model() {
    model::BaseModel m;
    model::FrozenLayer l0;
    l0.W = Matrix::from_rows({{2.0, 0.0}, {0.0, 0.0}});
    l0.b = Matrix(2, 1);
    l0.activation = model::Activation::identity;
    model::FrozenLayer l1;
    l1.W = Matrix::identity(2);
    l1.b = Matrix(2, 1);
    l1.activation = model::Activation::identity;
    m.layers = {l0, l1};
    m.input_dim = 2;
    m.output_dim = 2;
    return m;
}

data::Dataset sign_task(size_t n) {
    // Label 0 when x0 > 0; logits are [2*x0, 0] so the frozen model is exact.
    data::Dataset ds;
    ds.inputs = Matrix(2, 2 * n);
    Rng rng(123);
    for (size_t j = 0; j < 2 * n; ++j) {
        const double sign = j % 2 == 0 ? 1.0 : -1.0;
        ds.inputs.at(0, j) = sign * rng.uniform(0.5, 1.5);
        ds.inputs.at(1, j) = rng.uniform(-1.0, 1.0);
        ds.labels.push_back(sign > 0.0 ? 0 : 1);
    }
    return ds;
}

// Brute-force re-implementation of the alternating drop sequence at step 1,
// measuring accuracy at every prefix, no refinement shortcuts.
std::pair<size_t, size_t> exhaustive_sweep_oracle(const model::BaseModel& m, size_t layer,
                                                  const data::Dataset& d_t,
                                                  const importance::ImportanceScores& s,
                                                  double tau) {
    const Matrix& w = m.layers[layer].W;
    const double mu = model::accuracy(m, nullptr, d_t);
    auto order_desc = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        for (size_t i = 0; i < v.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](size_t a, size_t b) { return v[a] > v[b]; });
        std::reverse(idx.begin(), idx.end());
        return idx;
    };
    const std::vector<size_t> rd = order_desc(s.row);
    const std::vector<size_t> cd = order_desc(s.col);
    auto acc_at = [&](size_t dr, size_t dc) {
        Matrix wm = w;
        for (size_t t = 0; t < dr; ++t)
            for (size_t j = 0; j < w.cols; ++j) wm.at(rd[t], j) = 0.0;
        for (size_t t = 0; t < dc; ++t)
            for (size_t i = 0; i < w.rows; ++i) wm.at(i, cd[t]) = 0.0;
        const Matrix logits = model::forward_with_layer_override(m, d_t.inputs, layer, wm);
        size_t hits = 0;
        for (size_t j = 0; j < d_t.size(); ++j)
            if (model::argmax_lowest(logits, j) == d_t.labels[j]) ++hits;
        return static_cast<double>(hits) / static_cast<double>(d_t.size());
    };
    size_t dr = 0, dc = 0;
    bool rows_turn = true;
    while (dr < w.rows || dc < w.cols) {
        if (rows_turn && dr == w.rows) { rows_turn = false; continue; }
        if (!rows_turn && dc == w.cols) { rows_turn = true; continue; }
        const size_t ndr = dr + (rows_turn ? 1 : 0);
        const size_t ndc = dc + (rows_turn ? 0 : 1);
        if (acc_at(ndr, ndc) >= tau * mu) {
            dr = ndr;
            dc = ndc;
            rows_turn = !rows_turn;
        } else {
            break;
        }
    }
    return {w.rows - dr, w.cols - dc};
}

}  // namespace

TEST_SUITE("sparsity") {

TEST_CASE("rank-1 constructed model shrinks to the structural support") {
    const model::BaseModel m = rank1_model();
    const data::Dataset d_t = sign_task(16);
    CHECK(model::accuracy(m, nullptr, d_t) == 1.0);

    DeriveOptions opts;
    const importance::ImportanceScores scores =
        layer_row_col_scores(m, 0, d_t, importance::Method::svd, opts);
    CHECK(scores.row[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(scores.row[1] == doctest::Approx(0.0).epsilon(1e-10));

    const LayerSparsity ls = derive_layer_sparsity(m, 0, d_t, scores, 0.9, 1);
    CHECK(ls.retained_rows == 1);
    CHECK(ls.retained_cols == 1);
    CHECK_FALSE(ls.threshold_unreachable);
    CHECK(ls.p_row == doctest::Approx(0.5));
    CHECK(ls.element_rate == doctest::Approx(0.25));
}

TEST_CASE("step=1 result is minimal: one more drop violates the guard") {
    const model::BaseModel m = rank1_model();
    const data::Dataset d_t = sign_task(16);
    DeriveOptions opts;
    const importance::ImportanceScores scores =
        layer_row_col_scores(m, 0, d_t, importance::Method::svd, opts);
    const LayerSparsity ls = derive_layer_sparsity(m, 0, d_t, scores, 0.9, 1);
    const double mu = model::accuracy(m, nullptr, d_t);

    // The next drop in deterministic order is the remaining row; apply it.
    Matrix wm = m.layers[0].W;
    for (size_t j = 0; j < wm.cols; ++j) wm.at(0, j) = 0.0;  // last retained row
    for (size_t i = 0; i < wm.rows; ++i) wm.at(i, 1) = 0.0;  // already-dropped col
    for (size_t j = 0; j < wm.cols; ++j) wm.at(1, j) = 0.0;  // already-dropped row
    const Matrix logits = model::forward_with_layer_override(m, d_t.inputs, 0, wm);
    size_t hits = 0;
    for (size_t j = 0; j < d_t.size(); ++j)
        if (model::argmax_lowest(logits, j) == d_t.labels[j]) ++hits;
    const double acc = static_cast<double>(hits) / static_cast<double>(d_t.size());
    CHECK(acc < 0.9 * mu);
    CHECK(ls.retained_rows == 1);
}

TEST_CASE("derive matches the exhaustive alternating-sweep oracle") {
    const data::TaskSpec spec{data::TaskKind::gaussian_mixture, 3, 6, 0.3, 13};
    model::PretrainConfig pc;
    pc.seed = 4;
    pc.epochs = 80;
    pc.learning_rate = 2e-3;
    pc.samples_per_class = 48;
    pc.holdout_per_class = 16;
    const model::BaseModel m = model::pretrain(spec, {10, 8}, pc).model;
    const data::Dataset d_t = data::generate(spec, 8, 99);

    DeriveOptions opts;
    for (size_t layer = 0; layer < m.layers.size(); ++layer) {
        for (const importance::Method method :
             {importance::Method::svd, importance::Method::snip}) {
            const importance::ImportanceScores scores =
                layer_row_col_scores(m, layer, d_t, method, opts);
            const LayerSparsity got = derive_layer_sparsity(m, layer, d_t, scores, 0.9, 1);
            const auto [wr, wc] = exhaustive_sweep_oracle(m, layer, d_t, scores, 0.9);
            CHECK(got.retained_rows == wr);
            CHECK(got.retained_cols == wc);
        }
    }
}

TEST_CASE("derive_profile: determinism, isolation, accuracy contract") {
    const data::TaskSpec spec{data::TaskKind::gaussian_mixture, 3, 6, 0.3, 17};
    model::PretrainConfig pc;
    pc.seed = 6;
    pc.epochs = 80;
    pc.learning_rate = 2e-3;
    pc.samples_per_class = 48;
    pc.holdout_per_class = 16;
    const model::BaseModel m = model::pretrain(spec, {10, 8}, pc).model;
    const data::Dataset d_t = data::generate(spec, 8, 101);

    DeriveOptions opts;
    opts.step = 1;
    const uint64_t hash_before = model::model_hash(m);
    const SparsityProfile a = derive_profile(m, d_t, importance::Method::svd, opts);
    const SparsityProfile b = derive_profile(m, d_t, importance::Method::svd, opts);
    CHECK(model::model_hash(m) == hash_before);
    REQUIRE(a.layers.size() == m.layers.size());
    for (size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].retained_rows == b.layers[l].retained_rows);
        CHECK(a.layers[l].retained_cols == b.layers[l].retained_cols);
        // p identities hold exactly for derived profiles.
        CHECK(a.layers[l].p_row ==
              static_cast<double>(a.layers[l].retained_rows) /
                  static_cast<double>(a.layers[l].m));
    }

    // Accuracy contract: masking exactly the retained set keeps >= tau*mu.
    for (size_t l = 0; l < a.layers.size(); ++l) {
        const importance::ImportanceScores scores =
            layer_row_col_scores(m, l, d_t, importance::Method::svd, opts);
        const adapters::MaskPair mask = importance::deterministic_top_indices(
            scores, a.layers[l].retained_rows, a.layers[l].retained_cols);
        Matrix wm = m.layers[l].W;
        for (size_t i = 0; i < wm.rows; ++i)
            for (size_t j = 0; j < wm.cols; ++j)
                if (!mask.u_row[i] || !mask.u_col[j]) wm.at(i, j) = 0.0;
        const Matrix logits = model::forward_with_layer_override(m, d_t.inputs, l, wm);
        size_t hits = 0;
        for (size_t j = 0; j < d_t.size(); ++j)
            if (model::argmax_lowest(logits, j) == d_t.labels[j]) ++hits;
        const double acc = static_cast<double>(hits) / static_cast<double>(d_t.size());
        CHECK(acc >= 0.9 * a.baseline_accuracy);
    }
}

TEST_CASE("chunked derivation with refinement still satisfies the accuracy contract") {
    const data::TaskSpec spec{data::TaskKind::gaussian_mixture, 3, 6, 0.3, 19};
    model::PretrainConfig pc;
    pc.seed = 9;
    pc.epochs = 80;
    pc.learning_rate = 2e-3;
    pc.samples_per_class = 48;
    pc.holdout_per_class = 16;
    const model::BaseModel m = model::pretrain(spec, {12, 10}, pc).model;
    const data::Dataset d_t = data::generate(spec, 8, 303);
    const double mu = model::accuracy(m, nullptr, d_t);

    DeriveOptions opts;
    for (const size_t step : {4u, 7u}) {
        for (size_t layer = 0; layer < m.layers.size(); ++layer) {
            const importance::ImportanceScores scores =
                layer_row_col_scores(m, layer, d_t, importance::Method::svd, opts);
            const LayerSparsity a = derive_layer_sparsity(m, layer, d_t, scores, 0.9, step);
            const LayerSparsity b = derive_layer_sparsity(m, layer, d_t, scores, 0.9, step);
            CHECK(a.retained_rows == b.retained_rows);  // deterministic
            CHECK(a.retained_cols == b.retained_cols);

            const adapters::MaskPair mask = importance::deterministic_top_indices(
                scores, a.retained_rows, a.retained_cols);
            Matrix wm = m.layers[layer].W;
            for (size_t i = 0; i < wm.rows; ++i)
                for (size_t j = 0; j < wm.cols; ++j)
                    if (!mask.u_row[i] || !mask.u_col[j]) wm.at(i, j) = 0.0;
            const Matrix logits =
                model::forward_with_layer_override(m, d_t.inputs, layer, wm);
            size_t hits = 0;
            for (size_t s = 0; s < d_t.size(); ++s)
                if (model::argmax_lowest(logits, s) == d_t.labels[s]) ++hits;
            CHECK(static_cast<double>(hits) / static_cast<double>(d_t.size()) >= 0.9 * mu);
        }
    }
}

TEST_CASE("degenerate threshold drives retention to the floor") {
    const model::BaseModel m = rank1_model();
    const data::Dataset d_t = sign_task(8);
    DeriveOptions opts;
    const importance::ImportanceScores scores =
        layer_row_col_scores(m, 1, d_t, importance::Method::svd, opts);
    // Layer 1 masked fully still leaves accuracy 0.5 > tau*mu for tiny tau;
    // wait: masking layer 1 entirely zeroes the logits, giving 0.5 accuracy.
    const LayerSparsity ls = derive_layer_sparsity(m, 1, d_t, scores, 1e-9, 1);
    CHECK(ls.retained_rows == 0);
    CHECK(ls.retained_cols == 0);
}

TEST_CASE("loosening the threshold never retains more") {
    const data::TaskSpec spec{data::TaskKind::gaussian_mixture, 3, 6, 0.3, 23};
    model::PretrainConfig pc;
    pc.seed = 14;
    pc.epochs = 80;
    pc.learning_rate = 2e-3;
    pc.samples_per_class = 48;
    pc.holdout_per_class = 16;
    const model::BaseModel m = model::pretrain(spec, {12, 10}, pc).model;
    const data::Dataset d_t = data::generate(spec, 8, 404);

    DeriveOptions opts;
    opts.step = 1;
    // The drop sequence is fixed by the scores, so a lower floor can only
    // push the first failure later: retained counts are monotone in tau.
    for (size_t layer = 0; layer < m.layers.size(); ++layer) {
        const importance::ImportanceScores scores =
            layer_row_col_scores(m, layer, d_t, importance::Method::svd, opts);
        size_t prev_rows = 0, prev_cols = 0;
        for (const double tau : {0.7, 0.8, 0.9}) {
            const LayerSparsity ls = derive_layer_sparsity(m, layer, d_t, scores, tau, 1);
            CHECK(ls.retained_rows >= prev_rows);
            CHECK(ls.retained_cols + ls.retained_rows >= prev_cols + prev_rows);
            prev_rows = ls.retained_rows;
            prev_cols = ls.retained_cols;
        }
    }
}

TEST_CASE("pyramidal profile: exact rates") {
    std::vector<std::pair<size_t, size_t>> dims(4, {64, 64});
    const SparsityProfile p = pyramidal_profile(0.8, 4, dims);
    // Direct exponentiation, same arithmetic as the profile builder.
    double rate = 1.0;
    for (size_t l = 0; l < 4; ++l) {
        rate *= 0.8;
        CHECK(p.layers[l].element_rate == rate);
    }
    CHECK(p.layers[0].element_rate == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(p.layers[1].element_rate == doctest::Approx(0.64).epsilon(1e-15));
    CHECK(p.layers[2].element_rate == doctest::Approx(0.512).epsilon(1e-15));
    CHECK(p.layers[3].element_rate == doctest::Approx(0.4096).epsilon(1e-15));

    const SparsityProfile half = pyramidal_profile(0.5, 2, {dims.begin(), dims.begin() + 2});
    CHECK(half.layers[1].element_rate == doctest::Approx(0.25).epsilon(1e-15));

    const SparsityProfile dense = pyramidal_profile(1.0, 4, dims);
    for (const LayerSparsity& l : dense.layers) {
        CHECK(l.element_rate == 1.0);
        CHECK(l.retained_rows == 64);
    }
}

TEST_CASE("balanced profile: constant rate, zero rate, sqrt scaling") {
    std::vector<std::pair<size_t, size_t>> dims(3, {64, 64});
    const SparsityProfile p = balanced_profile(0.3, 3, dims);
    for (const LayerSparsity& l : p.layers) CHECK(l.element_rate == 0.3);

    const SparsityProfile zero = balanced_profile(0.0, 3, dims);
    const auto masks = profile_to_masks(zero, MaskMode::partial, nullptr, 5);
    const adapters::LoraAdapter ad = adapters::init_adapter(64, 64, 4, 8.0, 1);
    for (const adapters::MaskPair& mask : masks)
        CHECK(adapters::trainable_parameter_count(ad, mask) == 0);

    // Parameter count tracks sqrt(p) for the row/col split.
    const size_t dense_count = adapters::dense_parameter_count(ad);
    for (double rate : {0.25, 0.49, 0.81}) {
        const SparsityProfile bp = balanced_profile(rate, 3, dims);
        const size_t count = 4 * (bp.layers[0].retained_rows + bp.layers[0].retained_cols);
        const double want = std::sqrt(rate) * static_cast<double>(dense_count);
        CHECK(std::fabs(static_cast<double>(count) - want) <= 8.0);
    }
}

TEST_CASE("invert_mask_pair: involution and partition") {
    const adapters::MaskPair mask = adapters::sample_mask_pair(20, 30, 0.4, 0.7, 9);
    const adapters::MaskPair inv = invert_mask_pair(mask);
    const adapters::MaskPair back = invert_mask_pair(inv);
    CHECK(back.u_row == mask.u_row);
    CHECK(back.u_col == mask.u_col);
    CHECK(adapters::ones_count(inv.u_row) + adapters::ones_count(mask.u_row) == 20);
    CHECK(adapters::ones_count(inv.u_col) + adapters::ones_count(mask.u_col) == 30);
    CHECK(inv.p_row == doctest::Approx(0.6));

    const adapters::MaskPair ones = adapters::sample_mask_pair(5, 5, 1.0, 1.0, 1);
    const adapters::MaskPair zeros = invert_mask_pair(ones);
    CHECK(adapters::ones_count(zeros.u_row) == 0);
}

TEST_CASE("profile_to_masks: modes behave per contract") {
    std::vector<std::pair<size_t, size_t>> dims(2, {40, 40});
    SparsityProfile profile = balanced_profile(0.49, 2, dims);

    std::vector<importance::ImportanceScores> scores(2);
    Rng rng(77);
    for (auto& s : scores) {
        s.granularity = importance::Granularity::row_col;
        for (int i = 0; i < 40; ++i) s.row.push_back(rng.uniform(0.0, 1.0));
        for (int i = 0; i < 40; ++i) s.col.push_back(rng.uniform(0.0, 1.0));
    }

    // Targeted with full retention -> all ones.
    SparsityProfile full = balanced_profile(1.0, 2, dims);
    for (const adapters::MaskPair& mask :
         profile_to_masks(full, MaskMode::targeted, &scores, 0))
        CHECK(adapters::ones_count(mask.u_row) == 40);

    // Targeted counts are pinned by the profile.
    for (const adapters::MaskPair& mask :
         profile_to_masks(profile, MaskMode::targeted, &scores, 0)) {
        CHECK(adapters::ones_count(mask.u_row) == profile.layers[0].retained_rows);
        CHECK(adapters::ones_count(mask.u_col) == profile.layers[0].retained_cols);
    }

    // Partial realized rates concentrate near the profile rates.
    std::vector<double> realized;
    for (uint64_t seed = 0; seed < 300; ++seed) {
        const auto masks = profile_to_masks(profile, MaskMode::partial, nullptr, seed);
        realized.push_back(static_cast<double>(adapters::ones_count(masks[0].u_row)) / 40.0);
    }
    const double want = profile.layers[0].p_row;
    const double sem = std::sqrt(want * (1.0 - want) / 40.0) / std::sqrt(300.0);
    CHECK(std::fabs(oracles::mean(realized) - want) <= 3.0 * sem);

    // Missing scores for score-driven modes is an error.
    CHECK_THROWS_AS((void)profile_to_masks(profile, MaskMode::targeted, nullptr, 0),
                    ConfigError);
    // Inverted is the complement of targeted.
    const auto tgt = profile_to_masks(profile, MaskMode::targeted, &scores, 0);
    const auto inv = profile_to_masks(profile, MaskMode::inverted, &scores, 0);
    for (size_t l = 0; l < 2; ++l)
        for (size_t i = 0; i < 40; ++i) CHECK(tgt[l].u_row[i] + inv[l].u_row[i] == 1);
}

TEST_CASE("profile text serialization round-trips bit-exactly") {
    const model::BaseModel m = rank1_model();
    const data::Dataset d_t = sign_task(8);
    DeriveOptions opts;
    opts.step = 1;
    SparsityProfile p = derive_profile(m, d_t, importance::Method::svd, opts);
    p.layers[0].p_row = 1.0 / 3.0;  // force a value with no short decimal form
    const std::string text = profile_to_text(p);
    const SparsityProfile q = profile_from_text(text);
    CHECK(q.layers.size() == p.layers.size());
    CHECK(q.tau == p.tau);
    CHECK(q.baseline_accuracy == p.baseline_accuracy);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(q.layers[l].p_row == p.layers[l].p_row);
        CHECK(q.layers[l].p_col == p.layers[l].p_col);
        CHECK(q.layers[l].element_rate == p.layers[l].element_rate);
        CHECK(q.layers[l].retained_rows == p.layers[l].retained_rows);
    }
    CHECK(profile_to_text(q) == text);
    CHECK_THROWS_AS((void)profile_from_text("garbage"), IoError);
}

}  // TEST_SUITE
