#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "palora/adapters.hpp"
#include "palora/data.hpp"
#include "palora/model.hpp"
#include "palora/optim.hpp"

namespace palora::train {

enum class Scheduler { cosine, constant };

Scheduler scheduler_from_string(const std::string& s);
std::string to_string(Scheduler s);

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    size_t epochs = 200;
    size_t batch_size = 0;  // 0: full batch (few-shot sets are tiny)
    uint64_t seed = 0;
    Scheduler scheduler = Scheduler::cosine;
    size_t early_stop_patience = 20;
    size_t rank = 4;
    double alpha = 8.0;  // default 2 * rank
    double tau = 0.9;

    void validate() const;
};

struct RunRecord {
    TrainConfig config;
    std::string mode;  // lora, partial, targeted, ...
    std::vector<double> train_loss;    // per epoch
    std::vector<double> val_accuracy;  // per epoch
    double final_val_accuracy = 0.0;
    double final_test_accuracy = 0.0;
    size_t trainable_parameters = 0;
    std::vector<double> residual_norms;  // per layer, after training
    double wall_time_s = 0.0;
    uint64_t seed = 0;
    bool diverged = false;
    size_t best_epoch = 0;
};

std::string run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& text);
void save_run_record(const std::string& path, const RunRecord& r);
RunRecord load_run_record(const std::string& path);

// m shots per class for D_t and a disjoint m per class for validation.
std::pair<data::Dataset, data::Dataset> few_shot_sample(const data::Dataset& dataset,
                                                        size_t shots_per_class,
                                                        uint64_t seed);

// Fine-tunes the adapter set against the frozen model. Masked factor entries
// receive structurally zero gradients (masks are applied inside the forward)
// and are skipped by the optimizer, so they stay bitwise at initialization.
// Early stopping restores the best-validation snapshot. A non-finite loss
// aborts with record.diverged set.
RunRecord train_adapters(const model::BaseModel& m, adapters::AdapterSet& set,
                         const data::Dataset& d_train, const data::Dataset& d_val,
                         const TrainConfig& config,
                         const data::Dataset* d_test = nullptr);

// Round-robin multi-task training: batch t updates only adapter t. Each task
// draws from an identically-derived stream so paired tasks stay comparable.
std::vector<RunRecord> multi_task_train(const model::BaseModel& m,
                                        adapters::AdapterBank& bank,
                                        const std::vector<data::Dataset>& train_sets,
                                        const std::vector<data::Dataset>& val_sets,
                                        const TrainConfig& config,
                                        const std::vector<data::Dataset>* test_sets = nullptr);

struct SweepRun {
    TrainConfig config;
    RunRecord record;
};

struct SweepSummary {
    std::vector<SweepRun> runs;
    std::vector<size_t> top_indices;  // by validation accuracy, size <= top_k
    double mean_top_test_accuracy = 0.0;
    double std_top_test_accuracy = 0.0;
    double mean_top_parameters = 0.0;
};

using RunFactory = std::function<RunRecord(const TrainConfig&)>;

// Runs every (config x seed) combination through `run`, ranks by validation
// accuracy (ties to enumeration order), reports top-k test statistics.
// Dispatches up to PALORA_THREADS runs concurrently; results are slot-ordered
// so the outcome is independent of scheduling.
SweepSummary sweep(const std::vector<TrainConfig>& configs,
                   const std::vector<uint64_t>& seeds, size_t top_k,
                   const RunFactory& run);

void write_sweep_csv(const std::string& path, const std::string& method,
                     const std::string& dataset, const SweepSummary& summary);

}  // namespace palora::train
