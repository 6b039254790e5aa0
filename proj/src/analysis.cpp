#include "palora/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace palora::analysis {

std::vector<double> residual_norm_per_layer(const adapters::AdapterSet& set) {
    std::vector<double> norms;
    for (size_t l = 0; l < set.layers.size(); ++l)
        norms.push_back(frobenius_norm(adapters::layer_delta(set, l)));
    return norms;
}

std::vector<double> residual_norm_per_layer_normalized(const adapters::AdapterSet& set,
                                                       const model::BaseModel& m) {
    if (set.layers.size() != m.layers.size())
        throw DimensionError("residual norms: adapter/layer count mismatch");
    std::vector<double> norms = residual_norm_per_layer(set);
    for (size_t l = 0; l < norms.size(); ++l) {
        const double wn = frobenius_norm(m.layers[l].W);
        if (wn > 0.0) norms[l] /= wn;
    }
    return norms;
}

double mask_overlap(const adapters::MaskPair& a, const adapters::MaskPair& b,
                    OverlapKind kind) {
    if (a.u_row.size() != b.u_row.size() || a.u_col.size() != b.u_col.size())
        throw DimensionError("mask_overlap: mask shapes differ");
    size_t inter = 0, ones_a = 0, ones_b = 0;
    auto tally = [&](const std::vector<uint8_t>& xa, const std::vector<uint8_t>& xb) {
        for (size_t i = 0; i < xa.size(); ++i) {
            ones_a += xa[i] ? 1 : 0;
            ones_b += xb[i] ? 1 : 0;
            inter += (xa[i] && xb[i]) ? 1 : 0;
        }
    };
    tally(a.u_row, b.u_row);
    tally(a.u_col, b.u_col);
    if (ones_a == 0 && ones_b == 0) return 1.0;
    if (kind == OverlapKind::jaccard) {
        const size_t uni = ones_a + ones_b - inter;
        return static_cast<double>(inter) / static_cast<double>(uni);
    }
    const size_t denom = std::min(ones_a, ones_b);
    if (denom == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(denom);
}

std::vector<double> subnetwork_fraction(const sparsity::SparsityProfile& profile) {
    std::vector<double> fractions;
    for (const sparsity::LayerSparsity& l : profile.layers) {
        const double total = static_cast<double>(l.m) * static_cast<double>(l.n);
        fractions.push_back(total > 0.0 ? static_cast<double>(l.retained_rows) *
                                              static_cast<double>(l.retained_cols) / total
                                        : 0.0);
    }
    return fractions;
}

namespace {
const char* kind_name(ReportKind k) {
    switch (k) {
        case ReportKind::residual_norms: return "residual_norms";
        case ReportKind::overlap: return "overlap";
        case ReportKind::fractions: return "fractions";
    }
    return "?";
}
}  // namespace

std::string report_to_csv(const AnalysisReport& report) {
    std::ostringstream os;
    os << "kind,label,value\n";
    char buf[64];
    for (size_t i = 0; i < report.values.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", report.values[i]);
        const std::string label =
            i < report.labels.size() ? report.labels[i] : std::to_string(i);
        os << kind_name(report.kind) << ',' << label << ',' << buf << '\n';
    }
    return os.str();
}

std::string reports_to_json(const std::vector<AnalysisReport>& reports) {
    nlohmann::json out = nlohmann::json::array();
    for (const AnalysisReport& r : reports) {
        nlohmann::json j;
        j["kind"] = kind_name(r.kind);
        j["values"] = r.values;
        j["labels"] = r.labels;
        j["metadata"] = r.metadata;
        out.push_back(j);
    }
    return out.dump(2) + "\n";
}

}  // namespace palora::analysis
