#include "palora/data.hpp"

#include <cmath>
#include <string>

#include "palora/rng.hpp"

namespace palora::data {

namespace {
constexpr uint64_t kMeansTag = 0x6D65616E73ULL;
constexpr uint64_t kTeacherTag = 0x74656163ULL;
}  // namespace

void TaskSpec::validate() const {
    if (classes < 2) throw ConfigError("task: classes must be >= 2");
    if (input_dim < 2) throw ConfigError("task: input_dim must be >= 2");
    if (noise < 0.0) throw ConfigError("task: noise must be >= 0");
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "gaussian_mixture") return TaskKind::gaussian_mixture;
    if (s == "rotated_mixture") return TaskKind::rotated_mixture;
    if (s == "xor_bands") return TaskKind::xor_bands;
    if (s == "teacher_relabel") return TaskKind::teacher_relabel;
    throw ConfigError("unknown task kind: " + s);
}

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::gaussian_mixture: return "gaussian_mixture";
        case TaskKind::rotated_mixture: return "rotated_mixture";
        case TaskKind::xor_bands: return "xor_bands";
        case TaskKind::teacher_relabel: return "teacher_relabel";
    }
    return "?";
}

Dataset Dataset::select(const std::vector<size_t>& idx) const {
    Dataset out;
    out.provenance_seed = provenance_seed;
    out.inputs = Matrix(inputs.rows, idx.size());
    out.labels.resize(idx.size());
    for (size_t c = 0; c < idx.size(); ++c) {
        for (size_t r = 0; r < inputs.rows; ++r) out.inputs.at(r, c) = inputs.at(r, idx[c]);
        out.labels[c] = labels[idx[c]];
    }
    return out;
}

Matrix mixture_means(const TaskSpec& spec) {
    Rng rng(mix_seed(spec.seed, kMeansTag));
    Matrix means(spec.input_dim, spec.classes);
    for (size_t c = 0; c < spec.classes; ++c) {
        double norm2 = 0.0;
        std::vector<double> dir(spec.input_dim);
        for (double& v : dir) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double norm = std::sqrt(norm2);
        for (size_t r = 0; r < spec.input_dim; ++r)
            means.at(r, c) = spec.separation * dir[r] / (norm > 0.0 ? norm : 1.0);
    }
    return means;
}

namespace {

// Rotation by theta in every disjoint coordinate plane (0,1), (2,3), ...
void rotate_in_place(std::vector<double>& x, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (size_t p = 0; p + 1 < x.size(); p += 2) {
        const double a = x[p];
        const double b = x[p + 1];
        x[p] = c * a - s * b;
        x[p + 1] = s * a + c * b;
    }
}

Dataset generate_mixture(const TaskSpec& spec, size_t n_per_class, uint64_t sample_seed,
                         bool rotated) {
    Matrix means = mixture_means(spec);
    const size_t total = n_per_class * spec.classes;
    Dataset ds;
    ds.inputs = Matrix(spec.input_dim, total);
    ds.labels.resize(total);
    size_t col = 0;
    for (size_t c = 0; c < spec.classes; ++c) {
        Rng rng(mix_seed(sample_seed, c));
        std::vector<double> mean(spec.input_dim);
        for (size_t r = 0; r < spec.input_dim; ++r) mean[r] = means.at(r, c);
        if (rotated) rotate_in_place(mean, spec.rotation);
        const int label = rotated
                              ? static_cast<int>((c + static_cast<size_t>(
                                                          ((spec.label_shift % static_cast<int>(spec.classes)) +
                                                           static_cast<int>(spec.classes)) %
                                                          static_cast<int>(spec.classes))) %
                                                 spec.classes)
                              : static_cast<int>(c);
        for (size_t s = 0; s < n_per_class; ++s, ++col) {
            for (size_t r = 0; r < spec.input_dim; ++r)
                ds.inputs.at(r, col) = mean[r] + spec.noise * rng.normal();
            ds.labels[col] = label;
        }
    }
    return ds;
}

Dataset generate_xor(const TaskSpec& spec, size_t n_per_class, uint64_t sample_seed) {
    Rng rng(mix_seed(sample_seed, 0x786F72ULL));
    const size_t total = n_per_class * spec.classes;
    Dataset ds;
    ds.inputs = Matrix(spec.input_dim, total);
    ds.labels.resize(total);
    std::vector<size_t> filled(spec.classes, 0);
    size_t done = 0;
    const size_t max_attempts = 1000 * total + 1000;
    for (size_t attempt = 0; attempt < max_attempts && done < total; ++attempt) {
        std::vector<double> x(spec.input_dim);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        const size_t quadrant =
            (x[0] > 0.0 ? 1u : 0u) + (x[1] > 0.0 ? 2u : 0u);
        size_t label = quadrant % spec.classes;
        if (spec.noise > 0.0 && rng.bernoulli(spec.noise))
            label = static_cast<size_t>(rng.below(spec.classes));
        if (filled[label] >= n_per_class) continue;
        const size_t col = label * n_per_class + filled[label];
        for (size_t r = 0; r < spec.input_dim; ++r) ds.inputs.at(r, col) = x[r];
        ds.labels[col] = static_cast<int>(label);
        ++filled[label];
        ++done;
    }
    if (done < total)
        throw NumericError("xor_bands: could not fill balanced classes, seed " +
                           std::to_string(spec.seed));
    return ds;
}

Dataset generate_teacher(const TaskSpec& spec, size_t n_per_class, uint64_t sample_seed) {
    // Self-contained random 2-layer teacher; labels are its argmax outputs.
    Rng wrng(mix_seed(spec.seed, kTeacherTag));
    const size_t hidden = 16;
    Matrix w1(hidden, spec.input_dim), w2(spec.classes, hidden);
    for (double& v : w1.data) v = wrng.normal() / std::sqrt(static_cast<double>(spec.input_dim));
    for (double& v : w2.data) v = wrng.normal() / std::sqrt(static_cast<double>(hidden));

    // Center each class logit over a probe batch so every class is reachable
    // by argmax; an uncalibrated random head can starve a class entirely.
    Matrix probe(spec.input_dim, 256);
    for (double& v : probe.data) v = wrng.uniform(-1.0, 1.0);
    const Matrix probe_logits = matmul(w2, relu(matmul(w1, probe)));
    Matrix center(spec.classes, 1);
    for (size_t c = 0; c < spec.classes; ++c) {
        double mean = 0.0;
        for (size_t j = 0; j < probe.cols; ++j) mean += probe_logits.at(c, j);
        center.at(c, 0) = mean / static_cast<double>(probe.cols);
    }

    Rng rng(mix_seed(sample_seed, 0x74656163ULL));
    const size_t total = n_per_class * spec.classes;
    Dataset ds;
    ds.inputs = Matrix(spec.input_dim, total);
    ds.labels.resize(total);
    std::vector<size_t> filled(spec.classes, 0);
    size_t done = 0;
    const size_t max_attempts = 2000 * total + 1000;
    Matrix x(spec.input_dim, 1);
    for (size_t attempt = 0; attempt < max_attempts && done < total; ++attempt) {
        for (size_t r = 0; r < spec.input_dim; ++r) x.at(r, 0) = rng.uniform(-1.0, 1.0);
        const Matrix logits = sub(matmul(w2, relu(matmul(w1, x))), center);
        size_t label = 0;
        for (size_t i = 1; i < spec.classes; ++i)
            if (logits.at(i, 0) > logits.at(label, 0)) label = i;
        if (filled[label] >= n_per_class) continue;
        const size_t col = label * n_per_class + filled[label];
        for (size_t r = 0; r < spec.input_dim; ++r) ds.inputs.at(r, col) = x.at(r, 0);
        ds.labels[col] = static_cast<int>(label);
        ++filled[label];
        ++done;
    }
    if (done < total)
        throw NumericError("teacher_relabel: teacher rarely emits some class, seed " +
                           std::to_string(spec.seed));
    return ds;
}

}  // namespace

Dataset generate(const TaskSpec& spec, size_t n_per_class, uint64_t sample_seed) {
    spec.validate();
    if (n_per_class == 0) throw ConfigError("generate: n_per_class must be positive");
    Dataset ds = [&] {
        switch (spec.kind) {
        case TaskKind::gaussian_mixture:
            return generate_mixture(spec, n_per_class, sample_seed, false);
        case TaskKind::rotated_mixture:
            return generate_mixture(spec, n_per_class, sample_seed, true);
        case TaskKind::xor_bands:
            return generate_xor(spec, n_per_class, sample_seed);
        case TaskKind::teacher_relabel:
            return generate_teacher(spec, n_per_class, sample_seed);
        }
        throw ConfigError("generate: bad task kind");
    }();
    ds.provenance_seed = sample_seed;
    return ds;
}

}  // namespace palora::data
