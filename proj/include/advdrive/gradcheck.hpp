#pragma once

#include <functional>
#include <vector>

#include "advdrive/tensor.hpp"

namespace advdrive {

// Builds a scalar loss from the given parameter leaves. Must be
// deterministic; grad_check evaluates it repeatedly.
using LossBuilder = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares analytic gradients against central finite differences
// (step 1e-5) and returns the maximum relative error
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// over all parameter coordinates. Coordinates whose perturbed
// evaluations pass within 1e-7 of a non-differentiable point (relu
// input at zero, l2 norm of zero) are skipped.
//
// Throws if the builder is non-deterministic (detected by a bitwise
// mismatch between two evaluations at the same point).
double grad_check(const LossBuilder& builder, std::vector<Tensor>& params);

}  // namespace advdrive
