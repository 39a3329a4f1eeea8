#include "sattag/optim.hpp"

#include "sattag/errors.hpp"

#include <cmath>

namespace sattag {

namespace {

void check_slots(std::span<Tensor> params, const std::vector<std::vector<double>>& slots, const char* what) {
    if (slots.size() != params.size()) {
        throw ContractError(std::string(what) + ": state holds " + std::to_string(slots.size()) +
                            " buffers for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (slots[i].size() != params[i].size()) {
            throw ContractError(std::string(what) + ": state buffer " + std::to_string(i) +
                                " does not match parameter shape " + to_string(params[i].shape()));
        }
    }
}

std::vector<std::vector<double>> zero_like(std::span<const Tensor> params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const Tensor& p : params) out.emplace_back(p.size(), 0.0);
    return out;
}

}  // namespace

AdamState AdamState::for_params(std::span<const Tensor> params, double lr, double beta1, double beta2,
                                double epsilon) {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("adam: betas must lie in [0, 1)");
    }
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.m = zero_like(params);
    s.v = zero_like(params);
    return s;
}

SgdState SgdState::for_params(std::span<const Tensor> params, double lr, double momentum, bool nesterov) {
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must lie in [0, 1)");
    SgdState s;
    s.lr = lr;
    s.momentum = momentum;
    s.nesterov = nesterov;
    s.velocity = zero_like(params);
    return s;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
    check_slots(params, state.m, "adam_step");
    check_slots(params, state.v, "adam_step");
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        auto data = p.data();
        auto grad = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void sgd_step(std::span<Tensor> params, SgdState& state) {
    check_slots(params, state.velocity, "sgd_step");
    const double mu = state.momentum;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        auto data = p.data();
        auto grad = p.grad();
        auto& vel = state.velocity[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            vel[j] = mu * vel[j] + g;
            const double update = state.nesterov ? g + mu * vel[j] : vel[j];
            data[j] -= state.lr * update;
        }
    }
}

void zero_grads(std::span<Tensor> params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace sattag
