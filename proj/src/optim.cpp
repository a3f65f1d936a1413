#include "advdrive/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace advdrive {

namespace {

void check_grads(const std::vector<Tensor>& params) {
    for (const Tensor& p : params) {
        if (!p.has_grad()) {
            throw std::invalid_argument("optimizer step requires gradients on every parameter");
        }
    }
}

void ensure_moments(std::vector<std::vector<double>>& moments, const std::vector<Tensor>& params) {
    if (moments.empty()) {
        moments.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            moments[i].assign(params[i].values().size(), 0.0);
        }
    }
    if (moments.size() != params.size()) {
        throw std::invalid_argument("optimizer state does not match parameter list");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (moments[i].size() != params[i].values().size()) {
            throw std::invalid_argument("optimizer moment shape does not match parameter");
        }
    }
}

}  // namespace

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate) {
    if (!(learning_rate >= 0.0)) {
        throw std::invalid_argument("learning rate must be non-negative");
    }
    OptimizerState s;
    s.kind = kind;
    s.learning_rate = learning_rate;
    return s;
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state) {
    if (state.kind != OptimizerKind::Adam) {
        throw std::invalid_argument("adam_step called with non-Adam optimizer state");
    }
    check_grads(params);
    ensure_moments(state.first_moment, params);
    ensure_moments(state.second_moment, params);
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bias1 = 1.0 - std::pow(state.adam_beta1, t);
    const double bias2 = 1.0 - std::pow(state.adam_beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        const std::vector<double>& g = params[i].grad();
        std::vector<double>& m = state.first_moment[i];
        std::vector<double>& v = state.second_moment[i];
        std::vector<double>& p = params[i].mutable_values();
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = state.adam_beta1 * m[j] + (1.0 - state.adam_beta1) * g[j];
            v[j] = state.adam_beta2 * v[j] + (1.0 - state.adam_beta2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            p[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.adam_epsilon);
        }
    }
}

void sgd_step(std::vector<Tensor>& params, OptimizerState& state) {
    if (state.kind != OptimizerKind::Sgd) {
        throw std::invalid_argument("sgd_step called with non-SGD optimizer state");
    }
    check_grads(params);
    state.step_count += 1;
    for (Tensor& param : params) {
        const std::vector<double>& g = param.grad();
        std::vector<double>& p = param.mutable_values();
        for (size_t j = 0; j < p.size(); ++j) {
            p[j] -= state.learning_rate * g[j];
        }
    }
}

void optimizer_step(std::vector<Tensor>& params, OptimizerState& state) {
    if (state.kind == OptimizerKind::Adam) {
        adam_step(params, state);
    } else {
        sgd_step(params, state);
    }
}

}  // namespace advdrive
