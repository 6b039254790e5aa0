#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "palora/adapters.hpp"
#include "palora/matrix.hpp"

namespace palora::slt {

// Computable quantities of the width bound plus an empirical mask-search
// harness probing whether wider random adapters contain better-approximating
// subnetworks. C is a distribution-dependent constant the caller supplies.
struct SltConfig {
    double epsilon = 0.5;
    double delta = 0.1;
    double gamma = 0.0;
    double C = 1.0;
    std::vector<double> p_l;       // per-layer retention rates, in (0,1)
    std::vector<size_t> n_target;  // target widths per layer

    void validate() const;
};

// C * N_T^(1+gamma) / log(1/(1-min_p))^(1+gamma) * log(1/min(min_eps_l, delta))
double rho(double C, double N_T, double min_p, double gamma, double min_eps_l,
           double delta);

// eps/(n_L*L) * [(1+B_{l-1})(1+eps/L) * prod_{k=l+1}^{L-1}(||W_k||_inf + eps/L)]^-1
// The product over an empty range (l+1 > L-1) is 1.
double epsilon_l(double epsilon, size_t n_lora_L, size_t L, double B_lm1,
                 std::span<const double> target_inf_norms);

// max over D of the l1 norm of the layer-l features of the adapted model.
double feature_l1_bound(const model::BaseModel& m, const Matrix& sample_set,
                        size_t layer, const model::DeltaProvider* adapters = nullptr);

// ceil(C * n_T_l / log(1/(1-p_next)) * log(1/min(eps_l, delta/rho)))
size_t width_bound(size_t n_T_l, double p_next, double eps_l, double delta,
                   double rho_value, double C);

enum class SearchMode { exhaustive, greedy };

SearchMode search_mode_from_string(const std::string& s);
std::string to_string(SearchMode m);

struct MaskSearchResult {
    double best_error = 0.0;          // min over masks of max_x ||(D_T - D_masked) x||_2
    std::vector<uint8_t> mask_b;      // row-major over B's entries
    std::vector<uint8_t> mask_a;      // row-major over A's entries
    double density = 0.0;             // kept fraction of mask bits
    size_t evaluations = 0;
};

// max_{x in D} ||(target_delta - (B.U_B)(A.U_A)) x||_2 for explicit masks.
double masked_error(const adapters::LoraAdapter& target, const adapters::LoraAdapter& wide,
                    const std::vector<uint8_t>& mask_b, const std::vector<uint8_t>& mask_a,
                    const Matrix& sample_set);

// Element-level masks over the wide adapter's factors. Exhaustive enumerates
// all masks (bit count capped at 20); greedy flips the single best bit from
// all-ones until no improvement, capped at 10x the bit count.
MaskSearchResult empirical_approximation(const adapters::LoraAdapter& target,
                                         const adapters::LoraAdapter& wide,
                                         const Matrix& sample_set, SearchMode mode,
                                         uint64_t seed);

// U([-1,1]) factor entries; alpha = rank so the residual is exactly B*A.
adapters::LoraAdapter random_uniform_adapter(size_t m, size_t n, size_t rank,
                                             uint64_t seed);

struct HarnessConfig {
    size_t m = 6;
    size_t n = 6;
    size_t target_rank = 2;
    std::vector<size_t> widths = {4, 8, 16, 32};
    size_t trials = 50;
    size_t sample_count = 12;
    SearchMode mode = SearchMode::greedy;
    uint64_t seed = 0;
};

struct HarnessRow {
    size_t width = 0;
    size_t trial = 0;
    SearchMode mode = SearchMode::greedy;
    double best_error = 0.0;
    double density = 0.0;
    uint64_t seed = 0;
};

std::vector<HarnessRow> run_width_sweep(const HarnessConfig& config);
void write_harness_csv(const std::string& path, const std::vector<HarnessRow>& rows);
double median_error(const std::vector<HarnessRow>& rows, size_t width);

}  // namespace palora::slt
