#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palora/adapters.hpp"
#include "palora/data.hpp"
#include "palora/importance.hpp"
#include "palora/model.hpp"

namespace palora::sparsity {

struct LayerSparsity {
    size_t layer = 0;
    size_t m = 0;  // rows of W_l
    size_t n = 0;  // cols of W_l
    size_t retained_rows = 0;
    size_t retained_cols = 0;
    double p_row = 1.0;        // retained_rows / m
    double p_col = 1.0;        // retained_cols / n
    double element_rate = 1.0; // p_row * p_col
    bool threshold_unreachable = false;
};

struct SparsityProfile {
    std::vector<LayerSparsity> layers;
    double tau = 0.9;
    double baseline_accuracy = 0.0;  // frozen-model accuracy on D_t
    importance::Method method = importance::Method::svd;
    uint64_t dataset_seed = 0;

    void validate() const;
};

struct DeriveOptions {
    double tau = 0.9;
    size_t step = 0;         // 0: max(1, ceil(dim/100)) per axis chunk
    double k_energy = 0.9;   // spectral energy rule for the SVD method
    size_t fixed_k = 0;      // overrides k_energy when nonzero
};

// Progressive row/column masking of the frozen W_l (alternating, rows first),
// accuracy measured on D_t after every chunk, binary refinement inside the
// first failing chunk. Only layer l is masked; the model is never mutated.
LayerSparsity derive_layer_sparsity(const model::BaseModel& m, size_t layer,
                                    const data::Dataset& d_t,
                                    const importance::ImportanceScores& scores,
                                    double tau, size_t step);

// Row/col importance for one layer under the chosen criterion.
importance::ImportanceScores layer_row_col_scores(const model::BaseModel& m, size_t layer,
                                                  const data::Dataset& d_t,
                                                  importance::Method method,
                                                  const DeriveOptions& opts);

SparsityProfile derive_profile(const model::BaseModel& m, const data::Dataset& d_t,
                               importance::Method method, const DeriveOptions& opts);

// Baselines: element rate p^l (1-based depth) or constant p; both split the
// element rate symmetrically, p_row = p_col = sqrt(rate).
SparsityProfile pyramidal_profile(double p, size_t depth,
                                  const std::vector<std::pair<size_t, size_t>>& dims);
SparsityProfile balanced_profile(double p, size_t depth,
                                 const std::vector<std::pair<size_t, size_t>>& dims);

adapters::MaskPair invert_mask_pair(const adapters::MaskPair& mask);

enum class MaskMode { partial, targeted, stochastic, inverted };

MaskMode mask_mode_from_string(const std::string& s);
std::string to_string(MaskMode m);

// Per-layer masks realizing the profile. partial samples Bernoulli masks at
// the profile rates; targeted/stochastic/inverted need per-layer scores.
std::vector<adapters::MaskPair> profile_to_masks(
    const SparsityProfile& profile, MaskMode mode,
    const std::vector<importance::ImportanceScores>* scores, uint64_t seed,
    double temperature = 1.0);

// Versioned human-diffable text format; round-trips bit-exactly.
std::string profile_to_text(const SparsityProfile& profile);
SparsityProfile profile_from_text(const std::string& text);
void save_profile(const std::string& path, const SparsityProfile& profile);
SparsityProfile load_profile(const std::string& path);

}  // namespace palora::sparsity
