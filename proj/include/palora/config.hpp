#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "palora/data.hpp"
#include "palora/importance.hpp"
#include "palora/model.hpp"
#include "palora/slt.hpp"
#include "palora/sparsity.hpp"
#include "palora/training.hpp"

namespace palora::cli {

// Declarative experiment document. Parsing is strict: unknown keys anywhere
// and missing keys in any section a command touches fail with a ConfigError
// naming the key, before any compute runs. Every stochastic stage has its own
// explicit seed.
struct DataConfig {
    size_t pool_per_class = 0;
    size_t test_per_class = 0;
    uint64_t test_seed = 0;
    uint64_t pool_seed = 0;
};

struct DeriveConfig {
    importance::Method method = importance::Method::svd;
    double tau = 0.9;
    size_t step = 0;
    double k_energy = 0.9;
    size_t fixed_k = 0;
    size_t shots = 16;
    uint64_t shot_seed = 0;
};

struct AdapterConfig {
    size_t rank = 4;
    double alpha = 8.0;
    uint64_t init_seed = 0;
};

struct MaskConfig {
    std::string mode = "partial";
    uint64_t seed = 0;
    double temperature = 1.0;
    double p = 0.5;  // first-layer/global rate for pyramidal and balanced
};

struct SweepConfig {
    std::vector<double> learning_rates;
    std::vector<uint64_t> seeds;
    size_t top_k = 0;
};

struct SltCheckConfig {
    slt::SltConfig bound;
    slt::HarnessConfig harness;
};

struct ExperimentConfig {
    data::TaskSpec task;
    std::optional<data::TaskSpec> downstream;
    std::vector<size_t> hidden;
    model::Activation hidden_activation = model::Activation::relu;
    model::PretrainConfig pretrain;
    std::optional<DataConfig> dataconf;
    std::optional<DeriveConfig> derive;
    std::optional<AdapterConfig> adapter;
    std::optional<MaskConfig> mask;
    std::optional<train::TrainConfig> trainconf;
    std::optional<SweepConfig> sweep;
    std::optional<SltCheckConfig> slt_check;
    std::optional<std::vector<data::TaskSpec>> multi_tasks;
    std::string output_dir = "runs";

    uint64_t config_hash = 0;  // over the canonical serialized document

    const data::TaskSpec& downstream_task() const { return downstream ? *downstream : task; }
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Section accessors that fail with the section name when absent.
const DataConfig& need_data(const ExperimentConfig& c);
const DeriveConfig& need_derive(const ExperimentConfig& c);
const AdapterConfig& need_adapter(const ExperimentConfig& c);
const MaskConfig& need_mask(const ExperimentConfig& c);
const train::TrainConfig& need_train(const ExperimentConfig& c);
const SltCheckConfig& need_slt(const ExperimentConfig& c);

}  // namespace palora::cli
