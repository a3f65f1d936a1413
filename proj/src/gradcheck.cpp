#include "advdrive/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace advdrive {

double grad_check(const LossBuilder& builder, std::vector<Tensor>& params) {
    constexpr double step = 1e-5;

    Tensor loss = builder(params);
    if (loss.size() != 1) {
        throw std::invalid_argument("grad_check builder must produce a scalar loss");
    }
    {
        Tensor again = builder(params);
        if (again.values() != loss.values()) {
            throw std::runtime_error("grad_check builder is not deterministic");
        }
    }

    for (Tensor& p : params) p.zero_grad();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        if (!p.has_grad()) {
            throw std::runtime_error("grad_check parameter received no gradient");
        }
        analytic.push_back(p.grad());
    }

    const long long center_kinks = loss.kink_hits();
    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& values = params[pi].mutable_values();
        for (size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + step;
            Tensor up = builder(params);
            values[j] = saved - step;
            Tensor down = builder(params);
            values[j] = saved;
            if (center_kinks > 0 || up.kink_hits() > 0 || down.kink_hits() > 0) continue;
            if (relu_regime_mismatch(up, down) > 0) continue;
            const double numeric = (up.item() - down.item()) / (2.0 * step);
            const double a = analytic[pi][j];
            const double rel =
                std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace advdrive
