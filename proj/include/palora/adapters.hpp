#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palora/matrix.hpp"
#include "palora/model.hpp"

namespace palora::adapters {

// Low-rank factor pair; the effective residual is (alpha/rank) * B * A.
struct LoraAdapter {
    Matrix B;  // m x d
    Matrix A;  // d x n
    size_t rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

struct MaskPair {
    std::vector<uint8_t> u_row;  // length m, entries 0/1
    std::vector<uint8_t> u_col;  // length n
    double p_row = 1.0;          // rates used at sampling time
    double p_col = 1.0;
    uint64_t seed = 0;
};

struct ElementMask {
    Matrix U;  // m x n, entries 0/1
    double p = 1.0;
};

// B = 0, A uniform in [-1/sqrt(n), 1/sqrt(n)]: the residual starts at zero.
LoraAdapter init_adapter(size_t m, size_t n, size_t d, double alpha, uint64_t seed);

Matrix dense_delta(const LoraAdapter& a);                           // (alpha/d) B A
Matrix masked_delta(const LoraAdapter& a, const MaskPair& mask);    // rows/cols zeroed
Matrix element_masked_delta(const LoraAdapter& a, const ElementMask& u);

MaskPair sample_mask_pair(size_t m, size_t n, double p_row, double p_col, uint64_t seed);
ElementMask sample_element_mask(size_t m, size_t n, double p, uint64_t seed);

// Realized element-level retention: (ones_row/m) * (ones_col/n).
double effective_element_rate(const MaskPair& mask);
size_t ones_count(const std::vector<uint8_t>& bits);

// d * (ones(u_row) + ones(u_col)): entries that actually receive gradient.
size_t trainable_parameter_count(const LoraAdapter& a, const MaskPair& mask);
size_t dense_parameter_count(const LoraAdapter& a);

// Mask matrices used to freeze factor entries on the tape and in the
// optimizer: row_factor_mask is m x d with row i equal to u_row[i];
// col_factor_mask is d x n with column j equal to u_col[j].
Matrix row_factor_mask(const MaskPair& mask, size_t d);
Matrix col_factor_mask(const MaskPair& mask, size_t d);

enum class MaskingMode { none, pair, element };

// One adapter per model layer plus optional masks; the unit of training.
struct AdapterSet {
    std::vector<LoraAdapter> layers;
    std::vector<MaskPair> masks;           // used when masking == pair
    std::vector<ElementMask> element_masks;  // used when masking == element
    MaskingMode masking = MaskingMode::none;

    size_t total_trainable_parameters() const;
};

AdapterSet make_adapter_set(const model::BaseModel& m, size_t rank, double alpha,
                            uint64_t init_seed);

Matrix layer_delta(const AdapterSet& set, size_t layer);

// DeltaProvider over an AdapterSet, factored route: (alpha/d) B (A x) with
// masks applied to the factors (never materializes the m x n residual).
class LoraProvider : public model::DeltaProvider {
public:
    explicit LoraProvider(const AdapterSet& set) : set_(&set) {}
    std::optional<Matrix> delta_times(size_t layer, const Matrix& x) const override;

private:
    const AdapterSet* set_;
};

// Materialized-delta provider; the equivalence oracle for LoraProvider.
class DenseDeltaProvider : public model::DeltaProvider {
public:
    explicit DenseDeltaProvider(std::vector<Matrix> deltas) : deltas_(std::move(deltas)) {}
    std::optional<Matrix> delta_times(size_t layer, const Matrix& x) const override;

private:
    std::vector<Matrix> deltas_;
};

struct AdapterBank {
    std::vector<std::string> names;
    std::vector<AdapterSet> sets;

    size_t index_of(const std::string& name) const;
};

// Forward with only the active adapter's deltas applied.
Matrix multi_adapter_forward(const model::BaseModel& m, const AdapterBank& bank,
                             const std::string& active, const Matrix& x);

// Mask file / checkpoint-section serialization (bit-packed rows and columns).
std::string encode_masks_section(const std::vector<MaskPair>& masks);
std::vector<MaskPair> decode_masks_section(const std::string& payload);
void save_masks(const std::string& path, const std::vector<MaskPair>& masks);
std::vector<MaskPair> load_masks(const std::string& path);

std::string encode_adapters_section(const AdapterSet& set);
AdapterSet decode_adapters_section(const std::string& payload);

}  // namespace palora::adapters
