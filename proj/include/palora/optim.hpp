#pragma once

#include <cstddef>

#include "palora/matrix.hpp"

namespace palora::train {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamState {
    Matrix m;  // first moment
    Matrix v;  // second moment
    long step = 0;
};

// Decoupled weight decay AdamW with bias correction. `update_mask`, when
// given, freezes entries with mask 0 completely (no moment update, no decay)
// so masked adapter entries stay bitwise at their initialization.
void adamw_step(Matrix& param, const Matrix& grad, AdamState& state,
                const AdamConfig& config, double lr_t,
                const Matrix* update_mask = nullptr);

// lr_min + (lr_max - lr_min) * (1 + cos(pi t / T_max)) / 2
double cosine_lr(size_t t, size_t t_max, double lr_max, double lr_min);

}  // namespace palora::train
