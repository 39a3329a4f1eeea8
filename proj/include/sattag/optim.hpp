#pragma once

#include "sattag/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sattag {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    // Zeroed moment buffers shaped like `params`.
    static AdamState for_params(std::span<const Tensor> params, double lr = 1e-4, double beta1 = 0.9,
                                double beta2 = 0.999, double epsilon = 1e-8);
};

struct SgdState {
    double lr = 1e-4;
    double momentum = 0.9;
    bool nesterov = true;
    std::vector<std::vector<double>> velocity;

    static SgdState for_params(std::span<const Tensor> params, double lr = 1e-4, double momentum = 0.9,
                               bool nesterov = true);
};

// Bias-corrected ADAM update. Parameters without a gradient are treated as
// having a zero gradient. Increments t once.
void adam_step(std::span<Tensor> params, AdamState& state);

// Momentum SGD. With nesterov: v <- mu*v + g; p <- p - lr*(g + mu*v).
// Without: v <- mu*v + g; p <- p - lr*v.
void sgd_step(std::span<Tensor> params, SgdState& state);

void zero_grads(std::span<Tensor> params);

}  // namespace sattag
