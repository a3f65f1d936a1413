#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace advdrive {

using Shape = std::vector<int>;

long long numel(const Shape& shape);

namespace detail {
struct Node;
}

// A value in a dynamically built reverse-mode differentiation graph.
//
// Leaves are created directly (parameters, inputs); every op below records
// its inputs so that backward() can sweep the graph. Gradients accumulate
// into leaf tensors until zero_grad() is called. All storage is double
// precision; 4-D tensors are laid out batch x channel x height x width,
// row-major.
class Tensor {
   public:
    Tensor() = default;
    // Leaf constructor. Throws if shape/values disagree or values are not finite.
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    long long size() const;
    bool requires_grad() const;
    bool is_leaf() const;

    const std::vector<double>& values() const;
    // In-place mutation is allowed on leaves only (optimizer updates,
    // attack perturbation variables).
    std::vector<double>& mutable_values();

    double item() const;  // single-element tensors

    bool has_grad() const;
    const std::vector<double>& grad() const;
    // Leaf-only: allocates (zero-filled) if absent. Optimizer plumbing.
    std::vector<double>& mutable_grad();
    void zero_grad();

    // Reverse sweep from a single-element result produced by recorded ops.
    // Leaf gradients accumulate across calls.
    void backward() const;
    // Same sweep but seeded with an explicit output gradient; permits
    // chaining a precomputed downstream gradient into this graph.
    void backward(const std::vector<double>& seed_grad) const;

    // Number of forward evaluations near a non-differentiable point
    // (relu input or l2 norm within 1e-7 of zero) in the graph reachable
    // from this tensor. Gradient checking skips such evaluations.
    long long kink_hits() const;

   private:
    friend struct detail::Node;
    friend Tensor make_op_result(int, Shape, std::vector<double>, std::vector<Tensor>, double, int,
                                 long long);
    friend const detail::Node* unwrap(const Tensor&);
    std::shared_ptr<detail::Node> node_;
};

// Operator set. Shapes:
//   dense     x[N,In], w[Out,In], b[Out]          -> [N,Out]
//   conv2d    x[N,C,H,W], w[K,C,R,S], b[K]        -> [N,K,ceil(H/s),ceil(W/s)]
//             ("same" zero padding, stride s >= 1)
//   flatten   [N,...] -> [N,rest]
//   upsample2x nearest neighbour, [N,C,H,W] -> [N,C,2H,2W]
//   mse_loss / l2_norm / bce_loss reduce to a [1] scalar
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor flatten(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor upsample2x(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor l2_norm(const Tensor& x);
Tensor bce_loss(const Tensor& prob, const Tensor& target);

// Projection onto [lo, hi], applied outside the differentiation graph:
// the result is a detached leaf. Attack loops clamp between iterations
// rather than differentiating through the clip.
Tensor clamp(const Tensor& x, double lo, double hi);

// Counts relu units whose activation regime (input > 0 vs <= 0) differs
// between two structurally identical graphs. Gradient checking uses this
// to detect a kink crossing inside the finite-difference window, which
// pointwise proximity at the endpoints cannot see. Throws if the graphs
// do not share a topology.
long long relu_regime_mismatch(const Tensor& a, const Tensor& b);

// Instrumentation used by the resource-profiling defense. Counters are
// process-global; profiled loops run exclusively by contract.
namespace metrics {
long long backward_passes();
long long generator_passes();
void add_generator_pass();
void reset_pass_counts();
size_t live_tensor_bytes();
size_t peak_tensor_bytes();
void reset_peak_tensor_bytes();
}  // namespace metrics

}  // namespace advdrive
