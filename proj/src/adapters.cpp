#include "palora/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "palora/io.hpp"
#include "palora/rng.hpp"

namespace palora::adapters {

LoraAdapter init_adapter(size_t m, size_t n, size_t d, double alpha, uint64_t seed) {
    if (d < 1 || d > std::min(m, n))
        throw DimensionError("init_adapter: rank " + std::to_string(d) +
                             " invalid for " + std::to_string(m) + "x" + std::to_string(n));
    LoraAdapter a;
    a.rank = d;
    a.alpha = alpha;
    a.B = Matrix(m, d);
    a.A = Matrix(d, n);
    const double bound = 1.0 / std::sqrt(static_cast<double>(n));
    Rng rng(seed);
    for (double& v : a.A.data) v = rng.uniform(-bound, bound);
    return a;
}

Matrix dense_delta(const LoraAdapter& a) {
    return scale(matmul(a.B, a.A), a.scaling());
}

namespace {
void check_mask_shape(const LoraAdapter& a, const MaskPair& mask) {
    if (mask.u_row.size() != a.B.rows || mask.u_col.size() != a.A.cols)
        throw DimensionError("mask shape mismatch: (" + std::to_string(mask.u_row.size()) +
                             "," + std::to_string(mask.u_col.size()) + ") vs (" +
                             std::to_string(a.B.rows) + "," + std::to_string(a.A.cols) + ")");
}
}  // namespace

Matrix masked_delta(const LoraAdapter& a, const MaskPair& mask) {
    check_mask_shape(a, mask);
    Matrix bm = a.B;
    for (size_t i = 0; i < bm.rows; ++i)
        if (!mask.u_row[i])
            for (size_t j = 0; j < bm.cols; ++j) bm.at(i, j) = 0.0;
    Matrix am = a.A;
    for (size_t j = 0; j < am.cols; ++j)
        if (!mask.u_col[j])
            for (size_t i = 0; i < am.rows; ++i) am.at(i, j) = 0.0;
    return scale(matmul(bm, am), a.scaling());
}

Matrix element_masked_delta(const LoraAdapter& a, const ElementMask& u) {
    if (u.U.rows != a.B.rows || u.U.cols != a.A.cols)
        throw DimensionError("element mask shape mismatch");
    return hadamard(dense_delta(a), u.U);
}

MaskPair sample_mask_pair(size_t m, size_t n, double p_row, double p_col, uint64_t seed) {
    if (p_row < 0.0 || p_row > 1.0 || p_col < 0.0 || p_col > 1.0)
        throw ConfigError("sample_mask_pair: rates must be in [0,1]");
    MaskPair mask;
    mask.p_row = p_row;
    mask.p_col = p_col;
    mask.seed = seed;
    Rng rng(seed);
    mask.u_row.resize(m);
    for (uint8_t& b : mask.u_row) b = rng.bernoulli(p_row) ? 1 : 0;
    mask.u_col.resize(n);
    for (uint8_t& b : mask.u_col) b = rng.bernoulli(p_col) ? 1 : 0;
    return mask;
}

ElementMask sample_element_mask(size_t m, size_t n, double p, uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw ConfigError("sample_element_mask: rate must be in [0,1]");
    ElementMask em;
    em.p = p;
    em.U = Matrix(m, n);
    Rng rng(seed);
    for (double& v : em.U.data) v = rng.bernoulli(p) ? 1.0 : 0.0;
    return em;
}

size_t ones_count(const std::vector<uint8_t>& bits) {
    size_t c = 0;
    for (uint8_t b : bits) c += b ? 1 : 0;
    return c;
}

double effective_element_rate(const MaskPair& mask) {
    if (mask.u_row.empty() || mask.u_col.empty()) return 0.0;
    const double fr = static_cast<double>(ones_count(mask.u_row)) /
                      static_cast<double>(mask.u_row.size());
    const double fc = static_cast<double>(ones_count(mask.u_col)) /
                      static_cast<double>(mask.u_col.size());
    return fr * fc;
}

size_t trainable_parameter_count(const LoraAdapter& a, const MaskPair& mask) {
    check_mask_shape(a, mask);
    return a.rank * (ones_count(mask.u_row) + ones_count(mask.u_col));
}

size_t dense_parameter_count(const LoraAdapter& a) {
    return a.rank * (a.B.rows + a.A.cols);
}

Matrix row_factor_mask(const MaskPair& mask, size_t d) {
    Matrix m(mask.u_row.size(), d);
    for (size_t i = 0; i < m.rows; ++i) {
        const double v = mask.u_row[i] ? 1.0 : 0.0;
        for (size_t j = 0; j < d; ++j) m.at(i, j) = v;
    }
    return m;
}

Matrix col_factor_mask(const MaskPair& mask, size_t d) {
    Matrix m(d, mask.u_col.size());
    for (size_t j = 0; j < m.cols; ++j) {
        const double v = mask.u_col[j] ? 1.0 : 0.0;
        for (size_t i = 0; i < d; ++i) m.at(i, j) = v;
    }
    return m;
}

size_t AdapterSet::total_trainable_parameters() const {
    size_t total = 0;
    for (size_t l = 0; l < layers.size(); ++l) {
        switch (masking) {
            case MaskingMode::pair:
                total += trainable_parameter_count(layers[l], masks[l]);
                break;
            case MaskingMode::element:
            case MaskingMode::none:
                total += dense_parameter_count(layers[l]);
                break;
        }
    }
    return total;
}

AdapterSet make_adapter_set(const model::BaseModel& m, size_t rank, double alpha,
                            uint64_t init_seed) {
    AdapterSet set;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const Matrix& w = m.layers[l].W;
        // Narrow layers (e.g. the head) cap the rank at min(m, n).
        const size_t d = std::min(rank, std::min(w.rows, w.cols));
        set.layers.push_back(init_adapter(w.rows, w.cols, d, alpha, mix_seed(init_seed, l)));
    }
    return set;
}

Matrix layer_delta(const AdapterSet& set, size_t layer) {
    switch (set.masking) {
        case MaskingMode::none: return dense_delta(set.layers[layer]);
        case MaskingMode::pair: return masked_delta(set.layers[layer], set.masks[layer]);
        case MaskingMode::element:
            return element_masked_delta(set.layers[layer], set.element_masks[layer]);
    }
    throw ConfigError("bad masking mode");
}

std::optional<Matrix> LoraProvider::delta_times(size_t layer, const Matrix& x) const {
    if (layer >= set_->layers.size()) return std::nullopt;
    const LoraAdapter& a = set_->layers[layer];
    switch (set_->masking) {
        case MaskingMode::none:
            return scale(matmul(a.B, matmul(a.A, x)), a.scaling());
        case MaskingMode::pair: {
            const MaskPair& mask = set_->masks[layer];
            check_mask_shape(a, mask);
            Matrix am = a.A;
            for (size_t j = 0; j < am.cols; ++j)
                if (!mask.u_col[j])
                    for (size_t i = 0; i < am.rows; ++i) am.at(i, j) = 0.0;
            Matrix bm = a.B;
            for (size_t i = 0; i < bm.rows; ++i)
                if (!mask.u_row[i])
                    for (size_t j = 0; j < bm.cols; ++j) bm.at(i, j) = 0.0;
            return scale(matmul(bm, matmul(am, x)), a.scaling());
        }
        case MaskingMode::element:
            return matmul(element_masked_delta(a, set_->element_masks[layer]), x);
    }
    return std::nullopt;
}

std::optional<Matrix> DenseDeltaProvider::delta_times(size_t layer, const Matrix& x) const {
    if (layer >= deltas_.size() || deltas_[layer].size() == 0) return std::nullopt;
    return matmul(deltas_[layer], x);
}

size_t AdapterBank::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw ConfigError("unknown adapter name: " + name);
}

Matrix multi_adapter_forward(const model::BaseModel& m, const AdapterBank& bank,
                             const std::string& active, const Matrix& x) {
    const LoraProvider provider(bank.sets[bank.index_of(active)]);
    return model::forward(m, x, &provider);
}

std::string encode_masks_section(const std::vector<MaskPair>& masks) {
    std::ostringstream os(std::ios::binary);
    io::write_u32(os, static_cast<uint32_t>(masks.size()));
    for (const MaskPair& mask : masks) {
        io::write_u64(os, mask.u_row.size());
        io::write_u64(os, mask.u_col.size());
        io::write_f64(os, mask.p_row);
        io::write_f64(os, mask.p_col);
        io::write_u64(os, mask.seed);
        io::write_bits(os, mask.u_row);
        io::write_bits(os, mask.u_col);
    }
    return os.str();
}

std::vector<MaskPair> decode_masks_section(const std::string& payload) {
    std::istringstream is(payload, std::ios::binary);
    const uint32_t n = io::read_u32(is);
    std::vector<MaskPair> masks(n);
    for (MaskPair& mask : masks) {
        const uint64_t nr = io::read_u64(is);
        const uint64_t nc = io::read_u64(is);
        mask.p_row = io::read_f64(is);
        mask.p_col = io::read_f64(is);
        mask.seed = io::read_u64(is);
        mask.u_row = io::read_bits(is, nr);
        mask.u_col = io::read_bits(is, nc);
    }
    return masks;
}

void save_masks(const std::string& path, const std::vector<MaskPair>& masks) {
    io::write_container(path, {{io::kSectionMasks, encode_masks_section(masks)}});
}

std::vector<MaskPair> load_masks(const std::string& path) {
    for (const io::Section& s : io::read_container(path))
        if (s.tag == io::kSectionMasks) return decode_masks_section(s.payload);
    throw IoError("no masks section in " + path);
}

std::string encode_adapters_section(const AdapterSet& set) {
    std::ostringstream os(std::ios::binary);
    io::write_u32(os, static_cast<uint32_t>(set.layers.size()));
    for (const LoraAdapter& a : set.layers) {
        io::write_u64(os, a.rank);
        io::write_f64(os, a.alpha);
        io::write_matrix(os, a.B);
        io::write_matrix(os, a.A);
    }
    return os.str();
}

AdapterSet decode_adapters_section(const std::string& payload) {
    std::istringstream is(payload, std::ios::binary);
    AdapterSet set;
    const uint32_t n = io::read_u32(is);
    for (uint32_t l = 0; l < n; ++l) {
        LoraAdapter a;
        a.rank = io::read_u64(is);
        a.alpha = io::read_f64(is);
        a.B = io::read_matrix(is);
        a.A = io::read_matrix(is);
        set.layers.push_back(std::move(a));
    }
    return set;
}

}  // namespace palora::adapters
