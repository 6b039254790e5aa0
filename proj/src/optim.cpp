#include "palora/optim.hpp"

#include <cmath>

namespace palora::train {

void adamw_step(Matrix& param, const Matrix& grad, AdamState& state,
                const AdamConfig& config, double lr_t, const Matrix* update_mask) {
    if (!param.same_shape(grad)) throw DimensionError("adamw_step: grad shape mismatch");
    if (update_mask && !update_mask->same_shape(param))
        throw DimensionError("adamw_step: mask shape mismatch");
    if (state.m.size() == 0) {
        state.m = Matrix(param.rows, param.cols);
        state.v = Matrix(param.rows, param.cols);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < param.size(); ++i) {
        if (update_mask && update_mask->data[i] == 0.0) continue;
        const double g = grad.data[i];
        state.m.data[i] = config.beta1 * state.m.data[i] + (1.0 - config.beta1) * g;
        state.v.data[i] = config.beta2 * state.v.data[i] + (1.0 - config.beta2) * g * g;
        const double mhat = state.m.data[i] / bc1;
        const double vhat = state.v.data[i] / bc2;
        param.data[i] -= lr_t * (mhat / (std::sqrt(vhat) + config.eps) +
                                 config.weight_decay * param.data[i]);
    }
    ensure_finite(param, "adamw_step");
}

double cosine_lr(size_t t, size_t t_max, double lr_max, double lr_min) {
    if (t_max == 0) return lr_max;
    const double frac = static_cast<double>(t) / static_cast<double>(t_max);
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(3.141592653589793238462643383279502884 * frac));
}

}  // namespace palora::train
