#pragma once

#include <string>
#include <vector>

#include "palora/adapters.hpp"
#include "palora/sparsity.hpp"

namespace palora::analysis {

enum class ReportKind { residual_norms, overlap, fractions };

struct AnalysisReport {
    ReportKind kind = ReportKind::residual_norms;
    std::vector<double> values;  // per layer (or per pair for overlap)
    std::vector<std::string> labels;
    std::string metadata;
};

// Frobenius norm of each layer's effective (masked) residual; the normalized
// variant divides by ||W_l||_F.
std::vector<double> residual_norm_per_layer(const adapters::AdapterSet& set);
std::vector<double> residual_norm_per_layer_normalized(const adapters::AdapterSet& set,
                                                       const model::BaseModel& m);

enum class OverlapKind { jaccard, intersection_over_min };

// Overlap of the kept row+column index sets (rows and columns pooled into
// one universe). Jaccard by default; 1 when both masks are empty.
double mask_overlap(const adapters::MaskPair& a, const adapters::MaskPair& b,
                    OverlapKind kind = OverlapKind::jaccard);

// Kept element fraction per layer: retained_rows*retained_cols / (m*n).
std::vector<double> subnetwork_fraction(const sparsity::SparsityProfile& profile);

std::string report_to_csv(const AnalysisReport& report);
std::string reports_to_json(const std::vector<AnalysisReport>& reports);

}  // namespace palora::analysis
