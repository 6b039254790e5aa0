#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "palora/importance.hpp"
#include "palora/svd.hpp"

using namespace palora;
using namespace palora::importance;

namespace {

// Summed cross-entropy of the model with layer `l`'s weights overridden;
// the finite-difference oracle for SNIP/IMP.
double summed_ce(const model::BaseModel& m, size_t l, const Matrix& w,
                 const data::Dataset& batch) {
    const Matrix logits = model::forward_with_layer_override(m, batch.inputs, l, w);
    const Matrix probs = softmax_columns(logits);
    double loss = 0.0;
    for (size_t j = 0; j < batch.size(); ++j)
        loss -= std::log(probs.at(static_cast<size_t>(batch.labels[j]), j));
    return loss;
}

model::BaseModel two_layer_model(Rng& rng) {
    model::BaseModel m;
    model::FrozenLayer l0;
    l0.W = oracles::random_matrix(3, 3, rng);
    l0.b = oracles::random_matrix(3, 1, rng, -0.2, 0.2);
    l0.activation = model::Activation::gelu;
    model::FrozenLayer l1;
    l1.W = oracles::random_matrix(2, 3, rng);
    l1.b = Matrix(2, 1);
    l1.activation = model::Activation::identity;
    m.layers = {l0, l1};
    m.input_dim = 3;
    m.output_dim = 2;
    return m;
}

data::Dataset small_batch(Rng& rng, size_t n) {
    data::Dataset ds;
    ds.inputs = oracles::random_matrix(3, n, rng);
    for (size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % 2));
    return ds;
}

}  // namespace

TEST_SUITE("importance") {

TEST_CASE("svd importance: diagonal, orthogonal, and oracle cases") {
    const Matrix diag = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
    const ImportanceScores s = svd_importance(diag, 2);
    CHECK(s.row[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(s.row[1] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(s.row[2] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(s.col[2] == doctest::Approx(0.0).epsilon(1e-10));

    // Orthogonal matrix at full k: every row/col equally leveraged.
    const double r = std::sqrt(0.5);
    const Matrix q = Matrix::from_rows({{r, -r}, {r, r}});
    const ImportanceScores qs = svd_importance(q, 2);
    for (double v : qs.row) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : qs.col) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    // Random case against the independent full-SVD oracle.
    Rng rng(51);
    const Matrix w = oracles::random_matrix(8, 6, rng);
    const ImportanceScores ws = svd_importance(w, 3);
    const oracles::FullSvd full = oracles::jacobi_eig_svd(w);
    for (size_t i = 0; i < 8; ++i) {
        double want = 0.0;
        for (size_t j = 0; j < 3; ++j) want += full.u.at(i, j) * full.u.at(i, j);
        CHECK(ws.row[i] == doctest::Approx(want).epsilon(1e-8));
    }
}

TEST_CASE("snip matches finite differences and is linear in the batch") {
    Rng rng(61);
    const model::BaseModel m = two_layer_model(rng);
    const data::Dataset batch = small_batch(rng, 6);

    const uint64_t hash_before = model::model_hash(m);
    const ImportanceScores s = snip_importance(m, 0, batch);
    CHECK(model::model_hash(m) == hash_before);

    auto f = [&](const Matrix& w) { return summed_ce(m, 0, w, batch); };
    const Matrix fd = oracles::finite_difference_grad(f, m.layers[0].W);
    for (size_t i = 0; i < fd.size(); ++i)
        CHECK(s.element.data[i] ==
              doctest::Approx(std::fabs(fd.data[i])).epsilon(1e-4));

    // Duplicating the batch doubles the summed loss, hence every score.
    data::Dataset doubled;
    doubled.inputs = Matrix(3, 12);
    for (size_t j = 0; j < 12; ++j)
        for (size_t i = 0; i < 3; ++i)
            doubled.inputs.at(i, j) = batch.inputs.at(i, j % 6);
    for (size_t j = 0; j < 12; ++j) doubled.labels.push_back(batch.labels[j % 6]);
    const ImportanceScores s2 = snip_importance(m, 0, doubled);
    for (size_t i = 0; i < s.element.size(); ++i)
        CHECK(s2.element.data[i] == doctest::Approx(2.0 * s.element.data[i]).epsilon(1e-9));
}

TEST_CASE("snip gives zero score on a dead relu path") {
    // Unit 0 of the hidden layer is clamped off by a large negative bias, so
    // nothing that feeds it can matter.
    model::BaseModel m;
    model::FrozenLayer l0;
    l0.W = Matrix::from_rows({{0.5, 0.2}, {-0.3, 0.8}});
    l0.b = Matrix::from_rows({{-100.0}, {0.1}});
    l0.activation = model::Activation::relu;
    model::FrozenLayer l1;
    l1.W = Matrix::from_rows({{1.0, 0.5}, {-0.5, 1.0}});
    l1.b = Matrix(2, 1);
    l1.activation = model::Activation::identity;
    m.layers = {l0, l1};
    m.input_dim = 2;
    m.output_dim = 2;

    Rng rng(71);
    data::Dataset batch;
    batch.inputs = oracles::random_matrix(2, 8, rng);
    for (size_t i = 0; i < 8; ++i) batch.labels.push_back(static_cast<int>(i % 2));
    const ImportanceScores s = snip_importance(m, 0, batch);
    CHECK(s.element.at(0, 0) == 0.0);
    CHECK(s.element.at(0, 1) == 0.0);
    CHECK(sum(s.element) > 0.0);
}

TEST_CASE("imp equals snip scaled by |W| and matches finite differences") {
    Rng rng(81);
    const model::BaseModel m = two_layer_model(rng);
    const data::Dataset batch = small_batch(rng, 5);
    const ImportanceScores snip = snip_importance(m, 1, batch);
    const ImportanceScores imp = imp_importance(m, 1, batch);
    for (size_t i = 0; i < snip.element.size(); ++i)
        CHECK(imp.element.data[i] ==
              doctest::Approx(snip.element.data[i] * std::fabs(m.layers[1].W.data[i]))
                  .epsilon(1e-12));

    auto f = [&](const Matrix& w) { return summed_ce(m, 1, w, batch); };
    const Matrix fd = oracles::finite_difference_grad(f, m.layers[1].W);
    for (size_t i = 0; i < fd.size(); ++i)
        CHECK(imp.element.data[i] ==
              doctest::Approx(std::fabs(fd.data[i] * m.layers[1].W.data[i])).epsilon(1e-4));

    // Zero weight forces a zero IMP score regardless of gradient.
    model::BaseModel zeroed = m;
    zeroed.layers[1].W.at(0, 0) = 0.0;
    const ImportanceScores z = imp_importance(zeroed, 1, batch);
    CHECK(z.element.at(0, 0) == 0.0);
}

TEST_CASE("reduce_to_row_col: closed forms and loop oracle") {
    ImportanceScores all;
    all.granularity = Granularity::element;
    all.element = Matrix::full(4, 6, 1.0);
    const ImportanceScores r = reduce_to_row_col(all);
    for (double v : r.row) CHECK(v == doctest::Approx(6.0));
    for (double v : r.col) CHECK(v == doctest::Approx(4.0));

    ImportanceScores single;
    single.granularity = Granularity::element;
    single.element = Matrix(3, 3);
    single.element.at(1, 2) = 7.0;
    const ImportanceScores rs = reduce_to_row_col(single);
    CHECK(rs.row[1] == 7.0);
    CHECK(rs.row[0] == 0.0);
    CHECK(rs.col[2] == 7.0);

    Rng rng(91);
    ImportanceScores rnd;
    rnd.granularity = Granularity::element;
    rnd.element = oracles::random_matrix(5, 7, rng, 0.0, 2.0);
    const ImportanceScores rr = reduce_to_row_col(rnd);
    for (size_t i = 0; i < 5; ++i) {
        double want = 0.0;
        for (size_t j = 0; j < 7; ++j) want += rnd.element.at(i, j);
        CHECK(rr.row[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)reduce_to_row_col(rr), DimensionError);
}

TEST_CASE("deterministic_top_indices: examples, ties, scale invariance") {
    ImportanceScores s;
    s.granularity = Granularity::row_col;
    s.row = {3, 1, 2};
    s.col = {3, 1, 2};
    const adapters::MaskPair mask = deterministic_top_indices(s, 2, 3);
    CHECK(mask.u_row == std::vector<uint8_t>{1, 0, 1});
    CHECK(mask.u_col == std::vector<uint8_t>{1, 1, 1});

    // Ties break toward the lower index.
    ImportanceScores tied;
    tied.granularity = Granularity::row_col;
    tied.row = {1, 1, 1, 1};
    tied.col = {1, 1};
    const adapters::MaskPair tm = deterministic_top_indices(tied, 2, 1);
    CHECK(tm.u_row == std::vector<uint8_t>{1, 1, 0, 0});
    CHECK(tm.u_col == std::vector<uint8_t>{1, 0});

    // Scaling all scores leaves the selection unchanged.
    Rng rng(101);
    ImportanceScores rnd;
    rnd.granularity = Granularity::row_col;
    for (int i = 0; i < 9; ++i) rnd.row.push_back(rng.uniform(0.0, 5.0));
    for (int i = 0; i < 7; ++i) rnd.col.push_back(rng.uniform(0.0, 5.0));
    const adapters::MaskPair base = deterministic_top_indices(rnd, 4, 3);
    ImportanceScores scaled = rnd;
    for (double& v : scaled.row) v *= 13.7;
    for (double& v : scaled.col) v *= 13.7;
    const adapters::MaskPair same = deterministic_top_indices(scaled, 4, 3);
    CHECK(base.u_row == same.u_row);
    CHECK(base.u_col == same.u_col);

    CHECK_THROWS_AS((void)deterministic_top_indices(rnd, 10, 1), DimensionError);
}

TEST_CASE("stochastic_indices: cold limit, uniform frequencies, determinism") {
    ImportanceScores s;
    s.granularity = Granularity::row_col;
    s.row = {0.9, 0.1, 0.5, 0.7};
    s.col = {0.2, 0.8, 0.4};
    const adapters::MaskPair cold = stochastic_indices(s, 2, 1, 1e-6, 5);
    const adapters::MaskPair det = deterministic_top_indices(s, 2, 1);
    CHECK(cold.u_row == det.u_row);
    CHECK(cold.u_col == det.u_col);

    const adapters::MaskPair a = stochastic_indices(s, 2, 1, 1.0, 42);
    const adapters::MaskPair b = stochastic_indices(s, 2, 1, 1.0, 42);
    CHECK(a.u_row == b.u_row);
    CHECK(a.u_col == b.u_col);
    CHECK_THROWS_AS((void)stochastic_indices(s, 2, 1, 0.0, 1), ConfigError);

    // Uniform scores: each of 4 indices picked (for 1 slot) ~uniformly.
    ImportanceScores u;
    u.granularity = Granularity::row_col;
    u.row = {1, 1, 1, 1};
    u.col = {1};
    std::vector<size_t> counts(4, 0);
    const size_t trials = 10000;
    for (uint64_t seed = 0; seed < trials; ++seed) {
        const adapters::MaskPair m = stochastic_indices(u, 1, 1, 1.0, seed);
        for (size_t i = 0; i < 4; ++i)
            if (m.u_row[i]) counts[i]++;
    }
    const double expect = static_cast<double>(trials) / 4.0;
    const double sigma = std::sqrt(static_cast<double>(trials) * 0.25 * 0.75);
    for (size_t c : counts)
        CHECK(std::fabs(static_cast<double>(c) - expect) <= 3.0 * sigma);
}

TEST_CASE("mask overlap across disjoint few-shot draws is computable") {
    // Two disjoint shot draws give two deterministic masks whose overlap is a
    // reportable diagnostic; no threshold is asserted, only validity.
    Rng rng(111);
    const model::BaseModel m = two_layer_model(rng);
    data::Dataset a = small_batch(rng, 8);
    data::Dataset b = small_batch(rng, 8);
    const ImportanceScores sa = reduce_to_row_col(snip_importance(m, 0, a));
    const ImportanceScores sb = reduce_to_row_col(snip_importance(m, 0, b));
    const adapters::MaskPair ma = deterministic_top_indices(sa, 2, 2);
    const adapters::MaskPair mb = deterministic_top_indices(sb, 2, 2);
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < 3; ++i) {
        inter += (ma.u_row[i] && mb.u_row[i]) ? 1 : 0;
        uni += (ma.u_row[i] || mb.u_row[i]) ? 1 : 0;
        inter += (ma.u_col[i] && mb.u_col[i]) ? 1 : 0;
        uni += (ma.u_col[i] || mb.u_col[i]) ? 1 : 0;
    }
    const double overlap = static_cast<double>(inter) / static_cast<double>(uni);
    CHECK(overlap >= 0.0);
    CHECK(overlap <= 1.0);
}

TEST_CASE("flow_reweigh: identity cases and hand-computed composition") {
    ImportanceScores l0;
    l0.granularity = Granularity::element;
    l0.element = Matrix::from_rows({{1, 2}, {3, 4}});  // 2x2
    ImportanceScores l1 = l0;
    l1.element = Matrix(2, 2);  // zero scores in the next layer

    const auto unchanged = flow_reweigh({l0, l1});
    CHECK(unchanged[0].element.data == l0.element.data);
    const auto single = flow_reweigh({l0});
    CHECK(single[0].element.data == l0.element.data);

    // Hand-computed: layer1 scores [[1,0],[1,2]]; column sums [2,2];
    // incoming mean 2 vs layer0 mean 2.5 -> rescale 1.25 -> addend 2.5.
    ImportanceScores next;
    next.granularity = Granularity::element;
    next.element = Matrix::from_rows({{1, 0}, {1, 2}});
    const auto out = flow_reweigh({l0, next});
    CHECK(out[0].element.at(0, 0) == doctest::Approx(1.0 + 2.5));
    CHECK(out[0].element.at(0, 1) == doctest::Approx(2.0 + 2.5));
    CHECK(out[0].element.at(1, 0) == doctest::Approx(3.0 + 2.5));
    CHECK(out[0].element.at(1, 1) == doctest::Approx(4.0 + 2.5));
    CHECK(out[1].element.data == next.element.data);  // last layer unchanged
}

}  // TEST_SUITE
