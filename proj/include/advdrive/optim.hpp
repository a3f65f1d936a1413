#pragma once

#include <vector>

#include "advdrive/tensor.hpp"

namespace advdrive {

enum class OptimizerKind { Adam, Sgd };

// Per-parameter optimizer state. Moment accumulators are sized lazily on
// the first step and must shape-match their parameters from then on;
// step_count increases by exactly one per update.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    long long step_count = 0;
};

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate);

// Bias-corrected Adam update from the gradients currently stored on the
// parameters. Gradients are left untouched; the caller zeroes them.
void adam_step(std::vector<Tensor>& params, OptimizerState& state);

// Plain gradient descent: p -= lr * grad.
void sgd_step(std::vector<Tensor>& params, OptimizerState& state);

// Dispatches on state.kind.
void optimizer_step(std::vector<Tensor>& params, OptimizerState& state);

}  // namespace advdrive
