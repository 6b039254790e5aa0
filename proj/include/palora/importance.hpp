#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palora/adapters.hpp"
#include "palora/data.hpp"
#include "palora/matrix.hpp"
#include "palora/model.hpp"

namespace palora::importance {

enum class Granularity { element, row_col };
enum class Method { svd, snip, imp };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct ImportanceScores {
    size_t layer = 0;
    Granularity granularity = Granularity::element;
    Method method = Method::svd;
    Matrix element;           // element granularity: same shape as W_l
    std::vector<double> row;  // row_col granularity
    std::vector<double> col;
    uint64_t dataset_seed = 0;
    std::string dataset_id;

    void validate() const;  // nonnegative, finite, shape matches granularity
};

// Row/column leverage scores of the top-k subspace of W.
ImportanceScores svd_importance(const Matrix& w, size_t k);

// |dL/dW_l| with L the summed cross-entropy over the batch. The layer gets a
// gradient-tracking copy on a fresh tape; the frozen model is never touched.
ImportanceScores snip_importance(const model::BaseModel& m, size_t layer,
                                 const data::Dataset& batch);

// |W_l (Hadamard) dL/dW_l|.
ImportanceScores imp_importance(const model::BaseModel& m, size_t layer,
                                const data::Dataset& batch);

// Row sums and column sums of an element-granularity score.
ImportanceScores reduce_to_row_col(const ImportanceScores& scores);

// Ones at the top-count indices by score, ties to the lower index.
adapters::MaskPair deterministic_top_indices(const ImportanceScores& scores,
                                             size_t count_row, size_t count_col);

// Sampling without replacement from softmax(scores / temperature).
adapters::MaskPair stochastic_indices(const ImportanceScores& scores, size_t count_row,
                                      size_t count_col, double temperature, uint64_t seed);

// Adds each layer's incoming column-sum mass from the next layer, rescaled to
// the receiving layer's mean; single pass over the original scores, last
// layer unchanged.
std::vector<ImportanceScores> flow_reweigh(const std::vector<ImportanceScores>& per_layer);

void write_scores_csv(const std::string& path, const std::vector<ImportanceScores>& scores);

}  // namespace palora::importance
