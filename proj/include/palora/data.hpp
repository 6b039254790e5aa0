#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palora/matrix.hpp"

namespace palora::data {

enum class TaskKind { gaussian_mixture, rotated_mixture, xor_bands, teacher_relabel };

// Synthetic task family standing in for the image/text datasets. Cluster
// means are derived from `seed`, so a gaussian_mixture and a rotated_mixture
// with the same seed share clusters: the rotated variant applies a fixed
// plane rotation (and optional label shift), which is what gives the
// pretrain -> downstream transfer structure.
struct TaskSpec {
    TaskKind kind = TaskKind::gaussian_mixture;
    size_t classes = 2;
    size_t input_dim = 2;
    double noise = 0.1;
    uint64_t seed = 0;
    double rotation = 0.35;   // radians, rotated_mixture only
    int label_shift = 0;      // cyclic label permutation, rotated_mixture only
    double separation = 3.0;  // cluster mean norm for mixtures

    void validate() const;
};

struct Dataset {
    Matrix inputs;            // input_dim x N, samples are columns
    std::vector<int> labels;  // length N
    uint64_t provenance_seed = 0;

    size_t size() const { return labels.size(); }
    Dataset select(const std::vector<size_t>& idx) const;
};

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

// n_per_class samples per class; deterministic in (spec, sample_seed).
Dataset generate(const TaskSpec& spec, size_t n_per_class, uint64_t sample_seed);

// Cluster means as columns (classes of them), before any rotation.
Matrix mixture_means(const TaskSpec& spec);

}  // namespace palora::data
