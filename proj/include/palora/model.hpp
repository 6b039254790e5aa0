#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "palora/data.hpp"
#include "palora/matrix.hpp"

namespace palora::model {

enum class Activation { relu, gelu, identity };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// A pretrained layer. W and b are frozen once the model is published;
// nothing in this codebase mutates them afterwards (model_hash guards that
// in tests).
struct FrozenLayer {
    Matrix W;  // out x in
    Matrix b;  // out x 1
    Activation activation = Activation::relu;
};

struct BaseModel {
    std::vector<FrozenLayer> layers;
    size_t input_dim = 0;
    size_t output_dim = 0;
    data::TaskSpec provenance_task;
    uint64_t pretrain_seed = 0;

    size_t depth() const { return layers.size(); }
    void validate() const;  // consecutive shapes must chain
};

uint64_t model_hash(const BaseModel& m);

// Per-layer adapter hook for the forward pass: returns the residual
// contribution delta_W_l * x for layer l, or nullopt when the layer has no
// adapter. Implementations live in the adapters module.
struct DeltaProvider {
    virtual ~DeltaProvider() = default;
    virtual std::optional<Matrix> delta_times(size_t layer, const Matrix& x) const = 0;
};

// h_{l+1} = act(W_l h + delta_l h + b_l); frozen weights untouched.
Matrix forward(const BaseModel& m, const Matrix& x, const DeltaProvider* adapters = nullptr);

// Forward with layer `layer`'s weight matrix substituted; used by the
// sparsity derivation so the model itself is never mutated.
Matrix forward_with_layer_override(const BaseModel& m, const Matrix& x,
                                   size_t layer, const Matrix& w_override);

// Argmax-match fraction; ties break toward the lowest class index.
double accuracy(const BaseModel& m, const DeltaProvider* adapters, const data::Dataset& ds);
int argmax_lowest(const Matrix& logits, size_t col);

// Relabels inputs with the model's own argmax predictions.
data::Dataset relabel(const BaseModel& m, Matrix inputs);

struct PretrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    size_t epochs = 300;
    uint64_t seed = 0;
    size_t samples_per_class = 128;
    size_t holdout_per_class = 64;
};

struct PretrainResult {
    BaseModel model;
    double train_accuracy = 0.0;
    double holdout_accuracy = 0.0;
};

// Trains an MLP (hidden widths as given, identity head) on the task and
// freezes it. Deterministic in (spec, arch, config.seed).
PretrainResult pretrain(const data::TaskSpec& spec, const std::vector<size_t>& hidden,
                        const PretrainConfig& config,
                        Activation hidden_activation = Activation::relu);

// Checkpoint container round-trip ("PLRA" model section + provenance seed).
void save_checkpoint(const std::string& path, const BaseModel& m);
BaseModel load_checkpoint(const std::string& path);
std::string encode_model_section(const BaseModel& m);
BaseModel decode_model_section(const std::string& payload);

}  // namespace palora::model
