#include "palora/slt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "palora/model.hpp"
#include "palora/rng.hpp"

namespace palora::slt {

void SltConfig::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("slt: epsilon must be in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("slt: delta must be in (0,1)");
    if (gamma < 0.0) throw ConfigError("slt: gamma must be >= 0");
    if (!(C > 0.0)) throw ConfigError("slt: C must be > 0");
    for (double p : p_l)
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("slt: p_l must be in (0,1)");
}

double rho(double C, double N_T, double min_p, double gamma, double min_eps_l,
           double delta) {
    if (!(min_p > 0.0 && min_p < 1.0)) throw ConfigError("rho: min_p must be in (0,1)");
    const double min_term = std::min(min_eps_l, delta);
    if (!(min_term > 0.0 && min_term < 1.0))
        throw ConfigError("rho: min(eps_l, delta) must be in (0,1)");
    const double denom = std::log(1.0 / (1.0 - min_p));
    return C * std::pow(N_T, 1.0 + gamma) / std::pow(denom, 1.0 + gamma) *
           std::log(1.0 / min_term);
}

double epsilon_l(double epsilon, size_t n_lora_L, size_t L, double B_lm1,
                 std::span<const double> target_inf_norms) {
    if (L < 2) throw ConfigError("epsilon_l: depth must be >= 2");
    if (n_lora_L == 0) throw ConfigError("epsilon_l: final width must be positive");
    if (!std::isfinite(B_lm1) || B_lm1 < 0.0)
        throw ConfigError("epsilon_l: feature bound must be finite and >= 0");
    const double Ld = static_cast<double>(L);
    double bracket = (1.0 + B_lm1) * (1.0 + epsilon / Ld);
    for (double w : target_inf_norms) {
        if (!std::isfinite(w)) throw ConfigError("epsilon_l: norms must be finite");
        bracket *= w + epsilon / Ld;
    }
    return epsilon / (static_cast<double>(n_lora_L) * Ld) / bracket;
}

double feature_l1_bound(const model::BaseModel& m, const Matrix& sample_set,
                        size_t layer, const model::DeltaProvider* adapters) {
    if (layer >= m.layers.size()) throw DimensionError("feature_l1_bound: bad layer");
    // Forward up to and including layer, take the max column l1 norm.
    Matrix h = sample_set;
    for (size_t l = 0; l <= layer; ++l) {
        const model::FrozenLayer& fl = m.layers[l];
        Matrix z = matmul(fl.W, h);
        if (adapters) {
            std::optional<Matrix> d = adapters->delta_times(l, h);
            if (d) z = add(z, *d);
        }
        z = add_bias(z, fl.b);
        switch (fl.activation) {
            case model::Activation::relu: h = relu(z); break;
            case model::Activation::gelu: h = gelu(z); break;
            case model::Activation::identity: h = z; break;
        }
    }
    double best = 0.0;
    for (size_t j = 0; j < h.cols; ++j) {
        double s = 0.0;
        for (size_t i = 0; i < h.rows; ++i) s += std::fabs(h.at(i, j));
        best = std::max(best, s);
    }
    return best;
}

size_t width_bound(size_t n_T_l, double p_next, double eps_l, double delta,
                   double rho_value, double C) {
    if (!(p_next > 0.0 && p_next < 1.0))
        throw ConfigError("width_bound: p_next must be in (0,1)");
    if (!(rho_value > 0.0)) throw ConfigError("width_bound: rho must be > 0");
    const double min_term = std::min(eps_l, delta / rho_value);
    if (!(min_term > 0.0)) throw ConfigError("width_bound: log argument must be positive");
    const double v = C * static_cast<double>(n_T_l) / std::log(1.0 / (1.0 - p_next)) *
                     std::log(1.0 / min_term);
    return static_cast<size_t>(std::ceil(v));
}

SearchMode search_mode_from_string(const std::string& s) {
    if (s == "exhaustive") return SearchMode::exhaustive;
    if (s == "greedy") return SearchMode::greedy;
    throw ConfigError("unknown search mode: " + s);
}

std::string to_string(SearchMode m) {
    return m == SearchMode::exhaustive ? "exhaustive" : "greedy";
}

namespace {

Matrix apply_masks(const adapters::LoraAdapter& wide, const std::vector<uint8_t>& mask_b,
                   const std::vector<uint8_t>& mask_a) {
    Matrix bm = wide.B;
    for (size_t i = 0; i < bm.size(); ++i)
        if (!mask_b[i]) bm.data[i] = 0.0;
    Matrix am = wide.A;
    for (size_t i = 0; i < am.size(); ++i)
        if (!mask_a[i]) am.data[i] = 0.0;
    return scale(matmul(bm, am), wide.scaling());
}

double max_column_error(const Matrix& diff, const Matrix& samples) {
    const Matrix y = matmul(diff, samples);
    double best = 0.0;
    for (size_t j = 0; j < y.cols; ++j) {
        double s = 0.0;
        for (size_t i = 0; i < y.rows; ++i) s += y.at(i, j) * y.at(i, j);
        best = std::max(best, s);
    }
    return std::sqrt(best);
}

}  // namespace

double masked_error(const adapters::LoraAdapter& target, const adapters::LoraAdapter& wide,
                    const std::vector<uint8_t>& mask_b, const std::vector<uint8_t>& mask_a,
                    const Matrix& sample_set) {
    if (mask_b.size() != wide.B.size() || mask_a.size() != wide.A.size())
        throw DimensionError("masked_error: mask length mismatch");
    if (target.B.rows != wide.B.rows || target.A.cols != wide.A.cols)
        throw DimensionError("masked_error: target/wide shape mismatch");
    const Matrix diff = sub(adapters::dense_delta(target), apply_masks(wide, mask_b, mask_a));
    return max_column_error(diff, sample_set);
}

MaskSearchResult empirical_approximation(const adapters::LoraAdapter& target,
                                         const adapters::LoraAdapter& wide,
                                         const Matrix& sample_set, SearchMode mode,
                                         uint64_t seed) {
    (void)seed;  // recorded by the harness; both searches are deterministic
    const size_t bits_b = wide.B.size();
    const size_t bits_a = wide.A.size();
    const size_t bits = bits_b + bits_a;

    MaskSearchResult best;
    best.evaluations = 0;

    auto eval = [&](const std::vector<uint8_t>& mb, const std::vector<uint8_t>& ma) {
        ++best.evaluations;
        return masked_error(target, wide, mb, ma, sample_set);
    };

    if (mode == SearchMode::exhaustive) {
        if (bits > 20)
            throw ConfigError("exhaustive search needs <= 20 mask bits, got " +
                              std::to_string(bits));
        std::vector<uint8_t> mb(bits_b), ma(bits_a);
        double best_err = std::numeric_limits<double>::infinity();
        uint64_t best_bits = 0;
        for (uint64_t code = 0; code < (1ULL << bits); ++code) {
            for (size_t i = 0; i < bits_b; ++i) mb[i] = (code >> i) & 1u;
            for (size_t i = 0; i < bits_a; ++i) ma[i] = (code >> (bits_b + i)) & 1u;
            const double err = eval(mb, ma);
            if (err < best_err) {
                best_err = err;
                best_bits = code;
            }
        }
        best.best_error = best_err;
        best.mask_b.resize(bits_b);
        best.mask_a.resize(bits_a);
        for (size_t i = 0; i < bits_b; ++i) best.mask_b[i] = (best_bits >> i) & 1u;
        for (size_t i = 0; i < bits_a; ++i) best.mask_a[i] = (best_bits >> (bits_b + i)) & 1u;
    } else {
        // Greedy: start dense, flip the single bit that most reduces the
        // max-error, stop when no flip improves.
        std::vector<uint8_t> mb(bits_b, 1), ma(bits_a, 1);
        double current = eval(mb, ma);
        const size_t iter_cap = 10 * bits;
        for (size_t iter = 0; iter < iter_cap; ++iter) {
            double best_err = current;
            size_t best_bit = bits;  // sentinel
            for (size_t b = 0; b < bits; ++b) {
                uint8_t& slot = b < bits_b ? mb[b] : ma[b - bits_b];
                slot ^= 1u;
                const double err = eval(mb, ma);
                slot ^= 1u;
                if (err < best_err) {
                    best_err = err;
                    best_bit = b;
                }
            }
            if (best_bit == bits) break;
            uint8_t& slot = best_bit < bits_b ? mb[best_bit] : ma[best_bit - bits_b];
            slot ^= 1u;
            current = best_err;
        }
        best.best_error = current;
        best.mask_b = std::move(mb);
        best.mask_a = std::move(ma);
    }

    size_t kept = 0;
    for (uint8_t b : best.mask_b) kept += b;
    for (uint8_t a : best.mask_a) kept += a;
    best.density = bits > 0 ? static_cast<double>(kept) / static_cast<double>(bits) : 0.0;
    return best;
}

adapters::LoraAdapter random_uniform_adapter(size_t m, size_t n, size_t rank,
                                             uint64_t seed) {
    adapters::LoraAdapter a;
    a.rank = rank;
    a.alpha = static_cast<double>(rank);  // scaling 1: residual is exactly B*A
    a.B = Matrix(m, rank);
    a.A = Matrix(rank, n);
    Rng rng(seed);
    for (double& v : a.B.data) v = rng.uniform(-1.0, 1.0);
    for (double& v : a.A.data) v = rng.uniform(-1.0, 1.0);
    return a;
}

std::vector<HarnessRow> run_width_sweep(const HarnessConfig& config) {
    std::vector<HarnessRow> rows;
    for (size_t width : config.widths) {
        for (size_t trial = 0; trial < config.trials; ++trial) {
            const uint64_t trial_seed = mix_seed(config.seed, trial);
            const adapters::LoraAdapter target = random_uniform_adapter(
                config.m, config.n, config.target_rank, mix_seed(trial_seed, 0x74ULL));
            const adapters::LoraAdapter wide = random_uniform_adapter(
                config.m, config.n, width, mix_seed(trial_seed, 0x77ULL + width));
            Matrix samples(config.n, config.sample_count);
            Rng rng(mix_seed(trial_seed, 0x64ULL));
            for (double& v : samples.data) v = rng.uniform(-1.0, 1.0);

            const MaskSearchResult result =
                empirical_approximation(target, wide, samples, config.mode, trial_seed);
            rows.push_back({width, trial, config.mode, result.best_error, result.density,
                            trial_seed});
        }
    }
    return rows;
}

void write_harness_csv(const std::string& path, const std::vector<HarnessRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "width,trial,search,best_error,mask_density,seed\n";
    char buf[64];
    auto g = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const HarnessRow& r : rows)
        os << r.width << ',' << r.trial << ',' << to_string(r.mode) << ','
           << g(r.best_error) << ',' << g(r.density) << ',' << r.seed << '\n';
    if (!os) throw IoError("write failed: " + path);
}

double median_error(const std::vector<HarnessRow>& rows, size_t width) {
    std::vector<double> errors;
    for (const HarnessRow& r : rows)
        if (r.width == width) errors.push_back(r.best_error);
    if (errors.empty()) throw DimensionError("median_error: no rows for width");
    std::sort(errors.begin(), errors.end());
    const size_t n = errors.size();
    return n % 2 == 1 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
}

}  // namespace palora::slt
