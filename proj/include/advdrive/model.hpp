#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "advdrive/dataset.hpp"
#include "advdrive/image.hpp"
#include "advdrive/optim.hpp"
#include "advdrive/tensor.hpp"

namespace advdrive {

// Anything that maps a [N,3,H,W] tensor to a [N,1] prediction through
// recorded ops. Gradient-based attacks only need this surface.
class DifferentiableModel {
   public:
    virtual ~DifferentiableModel() = default;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual int input_size() const = 0;
};

enum class ArchId { EpochS, DaveS, DeepS };

std::string arch_name(ArchId id);
ArchId arch_from_name(const std::string& name);

struct LayerDef {
    enum class Kind { Conv, Dense };
    Kind kind;
    int out = 0;
    int stride = 1;
};

// CNN steering regressor. The final activation is tanh, so predictions
// stay in [-1, 1]. The last hidden dense layer's activations form the
// feature tap used by distillation.
class RegressionModel : public DifferentiableModel {
   public:
    RegressionModel() = default;
    RegressionModel(RegressionModel&&) = default;
    RegressionModel& operator=(RegressionModel&&) = default;
    RegressionModel(const RegressionModel&) = delete;
    RegressionModel& operator=(const RegressionModel&) = delete;

    ArchId arch_id() const { return arch_id_; }
    int input_size() const override { return input_size_; }
    const std::vector<LayerDef>& layers() const { return layers_; }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    long long param_count() const;
    int feature_dim() const;

    Tensor forward(const Tensor& x) const override;
    // Also returns the feature-tap activations ([N, feature_dim]).
    std::pair<Tensor, Tensor> forward_with_tap(const Tensor& x) const;

    // Deep copies. A frozen clone's parameters do not require gradients;
    // attacks clone-and-freeze so parallel runs never touch shared state.
    RegressionModel clone() const;
    RegressionModel clone_frozen() const;

    void zero_grads();
    // Copies parameter values from a same-architecture model.
    void load_values_from(const RegressionModel& other);

    friend RegressionModel build_model(ArchId, int, uint64_t);
    friend RegressionModel assemble_model(ArchId, int, std::vector<Tensor>);

   private:
    ArchId arch_id_ = ArchId::EpochS;
    int input_size_ = 64;
    std::vector<LayerDef> layers_;
    std::vector<Tensor> params_;  // weight, bias per layer, in layer order
};

// Deterministic construction; weights uniform in +-sqrt(6/fan_in), biases
// zero. input_size must be 64 or 128. Parameter counts order
// DeepS > EpochS > DaveS at both sizes.
RegressionModel build_model(ArchId arch, int input_size, uint64_t seed);

// Rebuilds a model around externally provided parameter tensors
// (persistence path); shapes must match the architecture.
RegressionModel assemble_model(ArchId arch, int input_size, std::vector<Tensor> params);

// Parameter names and shapes in storage order.
std::vector<std::pair<std::string, Shape>> param_manifest(ArchId arch, int input_size);

// Single-image prediction in [-1, 1]. Validates size and pixel range.
double predict(const DifferentiableModel& model, const Image& image);

struct TrainConfig {
    int epochs = 15;
    int batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    uint64_t seed = 1;
    int jobs = 1;
};

// In-place minibatch training on mean squared error; returns per-epoch
// mean training loss (length == epochs).
std::vector<double> train_model(RegressionModel& model, const Dataset& data,
                                const TrainConfig& cfg);

// Shared trainer core. Builds the unscaled loss for one sample on a
// worker replica of the model; the trainer averages over the minibatch,
// accumulates gradients and steps the optimizer. Plain training,
// adversarial training and distillation all run through this loop so
// their degenerate configurations coincide step for step.
using SampleLoss = std::function<Tensor(const RegressionModel& replica, size_t index)>;

std::vector<double> train_loop(RegressionModel& model, size_t n_samples,
                               const SampleLoss& loss_fn, const TrainConfig& cfg);

double eval_rmse(const DifferentiableModel& model, const Dataset& data, int jobs = 1);

double zero_predictor_rmse(const Dataset& data);

}  // namespace advdrive
