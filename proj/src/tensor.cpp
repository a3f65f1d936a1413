#include "advdrive/tensor.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace advdrive {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

constexpr double kKinkEps = 1e-7;

enum class Op {
    Leaf,
    Dense,
    Conv2d,
    Relu,
    Tanh,
    Sigmoid,
    Flatten,
    Add,
    Sub,
    Scale,
    Upsample2x,
    MseLoss,
    L2Norm,
    BceLoss,
};

int ceil_div(int a, int b) {  // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

int floor_div(int a, int b) {  // b > 0
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace

long long numel(const Shape& shape) {
    long long n = 1;
    for (int d : shape) {
        require(d > 0, "tensor extents must be positive");
        n *= d;
    }
    return n;
}

namespace metrics {
namespace {
std::atomic<long long> g_backward_passes{0};
std::atomic<long long> g_generator_passes{0};
std::atomic<long long> g_live_bytes{0};
std::atomic<long long> g_peak_bytes{0};

void add_bytes(long long n) {
    const long long live = g_live_bytes.fetch_add(n) + n;
    long long peak = g_peak_bytes.load();
    while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
    }
}

void sub_bytes(long long n) { g_live_bytes.fetch_sub(n); }
}  // namespace

long long backward_passes() { return g_backward_passes.load(); }
long long generator_passes() { return g_generator_passes.load(); }
void add_generator_pass() { g_generator_passes.fetch_add(1); }
void reset_pass_counts() {
    g_backward_passes.store(0);
    g_generator_passes.store(0);
}
size_t live_tensor_bytes() { return static_cast<size_t>(g_live_bytes.load()); }
size_t peak_tensor_bytes() { return static_cast<size_t>(g_peak_bytes.load()); }
void reset_peak_tensor_bytes() { g_peak_bytes.store(g_live_bytes.load()); }
}  // namespace metrics

namespace detail {

struct Node {
    Op op = Op::Leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // leaves only; persists until zero_grad
    bool requires_grad = false;
    double attr = 0.0;  // scale factor
    int iattr = 0;      // conv stride
    long long kink_hits = 0;
    std::vector<std::shared_ptr<Node>> inputs;

    Node(Op op_, Shape shape_, std::vector<double> value_)
        : op(op_), shape(std::move(shape_)), value(std::move(value_)) {
        metrics::add_bytes(static_cast<long long>(value.size() * sizeof(double)));
    }

    ~Node() {
        metrics::sub_bytes(static_cast<long long>((value.size() + grad.size()) * sizeof(double)));
    }

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(value.size(), 0.0);
            metrics::add_bytes(static_cast<long long>(grad.size() * sizeof(double)));
        }
    }
};

}  // namespace detail

using detail::Node;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    require(numel(shape) == static_cast<long long>(values.size()),
            "tensor shape does not match value count");
    for (double v : values) {
        require(std::isfinite(v), "tensor values must be finite");
    }
    node_ = std::make_shared<Node>(Op::Leaf, std::move(shape), std::move(values));
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<double>(numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
    require(defined(), "undefined tensor");
    return node_->shape;
}

long long Tensor::size() const { return static_cast<long long>(values().size()); }

bool Tensor::requires_grad() const {
    require(defined(), "undefined tensor");
    return node_->requires_grad;
}

bool Tensor::is_leaf() const {
    require(defined(), "undefined tensor");
    return node_->op == Op::Leaf;
}

const std::vector<double>& Tensor::values() const {
    require(defined(), "undefined tensor");
    return node_->value;
}

std::vector<double>& Tensor::mutable_values() {
    require(defined(), "undefined tensor");
    require(node_->op == Op::Leaf, "only leaf tensors may be mutated");
    return node_->value;
}

double Tensor::item() const {
    require(size() == 1, "item() requires a single-element tensor");
    return node_->value[0];
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    require(defined(), "undefined tensor");
    require(!node_->grad.empty(), "tensor has no gradient");
    return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    require(defined(), "undefined tensor");
    require(node_->op == Op::Leaf, "only leaf tensors expose mutable gradients");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    require(defined(), "undefined tensor");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

long long Tensor::kink_hits() const {
    require(defined(), "undefined tensor");
    long long total = 0;
    std::vector<const Node*> stack{node_.get()};
    std::unordered_set<const Node*> seen;
    while (!stack.empty()) {
        const Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        total += n->kink_hits;
        for (const auto& in : n->inputs) stack.push_back(in.get());
    }
    return total;
}

Tensor make_op_result(int op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      double attr, int iattr, long long kinks) {
    Tensor out;
    out.node_ = std::make_shared<Node>(static_cast<Op>(op), std::move(shape), std::move(value));
    out.node_->attr = attr;
    out.node_->iattr = iattr;
    out.node_->kink_hits = kinks;
    bool needs = false;
    for (auto& t : inputs) {
        require(t.defined(), "op input is undefined");
        needs = needs || t.node_->requires_grad;
        out.node_->inputs.push_back(t.node_);
    }
    out.node_->requires_grad = needs;
    return out;
}

const detail::Node* unwrap(const Tensor& t) { return t.node_.get(); }

namespace {

Tensor op_result(Op op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                 double attr = 0.0, int iattr = 0, long long kinks = 0) {
    return make_op_result(static_cast<int>(op), std::move(shape), std::move(value),
                          std::move(inputs), attr, iattr, kinks);
}

struct ConvDims {
    int n, c, h, w;       // input
    int k, r, s;          // kernel
    int stride;
    int oh, ow;           // output
    int pad_top, pad_left;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride) {
    require(xs.size() == 4, "conv2d input must be 4-D [N,C,H,W]");
    require(ws.size() == 4, "conv2d weight must be 4-D [K,C,R,S]");
    require(stride >= 1, "conv2d stride must be >= 1");
    ConvDims d{};
    d.n = xs[0];
    d.c = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.k = ws[0];
    require(ws[1] == d.c, "conv2d weight channel count does not match input");
    d.r = ws[2];
    d.s = ws[3];
    d.stride = stride;
    d.oh = (d.h + stride - 1) / stride;
    d.ow = (d.w + stride - 1) / stride;
    const int pad_h = std::max(0, (d.oh - 1) * stride + d.r - d.h);
    const int pad_w = std::max(0, (d.ow - 1) * stride + d.s - d.w);
    d.pad_top = pad_h / 2;
    d.pad_left = pad_w / 2;
    return d;
}

// Valid output-column range for kernel column s: 0 <= ox*stride + s - pad < W.
void col_range(const ConvDims& d, int s, int& lo, int& hi) {
    lo = std::max(0, ceil_div(d.pad_left - s, d.stride));
    hi = std::min(d.ow, floor_div(d.w - 1 - s + d.pad_left, d.stride) + 1);
    if (hi < lo) hi = lo;
}

}  // namespace

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 2, "dense input must be 2-D [N,In]");
    require(ws.size() == 2, "dense weight must be 2-D [Out,In]");
    require(ws[1] == xs[1], "dense weight input dimension mismatch");
    require(bias.shape() == Shape{ws[0]}, "dense bias shape mismatch");
    const int n = xs[0], in = xs[1], out = ws[0];
    std::vector<double> y(static_cast<size_t>(n) * out);
    const double* xp = x.values().data();
    const double* wp = weight.values().data();
    const double* bp = bias.values().data();
    for (int i = 0; i < n; ++i) {
        const double* xrow = xp + static_cast<size_t>(i) * in;
        double* yrow = y.data() + static_cast<size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            const double* wrow = wp + static_cast<size_t>(o) * in;
            double acc = bp[o];
            for (int j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
            yrow[o] = acc;
        }
    }
    return op_result(Op::Dense, Shape{n, out}, std::move(y), {x, weight, bias});
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
    const ConvDims d = conv_dims(x.shape(), weight.shape(), stride);
    require(bias.shape() == Shape{d.k}, "conv2d bias shape mismatch");
    std::vector<double> y(static_cast<size_t>(d.n) * d.k * d.oh * d.ow);
    const double* xp = x.values().data();
    const double* wp = weight.values().data();
    const double* bp = bias.values().data();
    for (int n = 0; n < d.n; ++n) {
        for (int k = 0; k < d.k; ++k) {
            double* out_map = y.data() + (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
            for (int i = 0; i < d.oh * d.ow; ++i) out_map[i] = bp[k];
            for (int c = 0; c < d.c; ++c) {
                const double* in_map = xp + (static_cast<size_t>(n) * d.c + c) * d.h * d.w;
                const double* ker = wp + (static_cast<size_t>(k) * d.c + c) * d.r * d.s;
                for (int r = 0; r < d.r; ++r) {
                    for (int s = 0; s < d.s; ++s) {
                        const double wv = ker[r * d.s + s];
                        if (wv == 0.0) continue;
                        int lo = 0, hi = 0;
                        col_range(d, s, lo, hi);
                        for (int oy = 0; oy < d.oh; ++oy) {
                            const int iy = oy * d.stride + r - d.pad_top;
                            if (iy < 0 || iy >= d.h) continue;
                            const double* xrow = in_map + static_cast<size_t>(iy) * d.w;
                            double* orow = out_map + static_cast<size_t>(oy) * d.ow;
                            int ix = lo * d.stride + s - d.pad_left;
                            for (int ox = lo; ox < hi; ++ox, ix += d.stride) {
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return op_result(Op::Conv2d, Shape{d.n, d.k, d.oh, d.ow}, std::move(y), {x, weight, bias}, 0.0,
                     stride);
}

Tensor relu(const Tensor& x) {
    std::vector<double> y = x.values();
    long long kinks = 0;
    for (double& v : y) {
        if (std::fabs(v) <= kKinkEps) ++kinks;
        if (v < 0.0) v = 0.0;
    }
    return op_result(Op::Relu, x.shape(), std::move(y), {x}, 0.0, 0, kinks);
}

Tensor tanh(const Tensor& x) {
    std::vector<double> y = x.values();
    for (double& v : y) v = std::tanh(v);
    return op_result(Op::Tanh, x.shape(), std::move(y), {x});
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> y = x.values();
    for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
    return op_result(Op::Sigmoid, x.shape(), std::move(y), {x});
}

Tensor flatten(const Tensor& x) {
    const Shape& s = x.shape();
    require(s.size() >= 2, "flatten input must have rank >= 2");
    long long rest = 1;
    for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
    return op_result(Op::Flatten, Shape{s[0], static_cast<int>(rest)}, x.values(), {x});
}

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add operands must have identical shapes");
    std::vector<double> y = a.values();
    const std::vector<double>& bv = b.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return op_result(Op::Add, a.shape(), std::move(y), {a, b});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub operands must have identical shapes");
    std::vector<double> y = a.values();
    const std::vector<double>& bv = b.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return op_result(Op::Sub, a.shape(), std::move(y), {a, b});
}

Tensor scale(const Tensor& x, double factor) {
    require(std::isfinite(factor), "scale factor must be finite");
    std::vector<double> y = x.values();
    for (double& v : y) v *= factor;
    return op_result(Op::Scale, x.shape(), std::move(y), {x}, factor);
}

Tensor upsample2x(const Tensor& x) {
    const Shape& s = x.shape();
    require(s.size() == 4, "upsample2x input must be 4-D [N,C,H,W]");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    std::vector<double> y(static_cast<size_t>(n) * c * 4 * h * w);
    const double* xp = x.values().data();
    for (int m = 0; m < n * c; ++m) {
        const double* in_map = xp + static_cast<size_t>(m) * h * w;
        double* out_map = y.data() + static_cast<size_t>(m) * 4 * h * w;
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                const double v = in_map[iy * w + ix];
                double* o = out_map + (2 * iy) * (2 * w) + 2 * ix;
                o[0] = v;
                o[1] = v;
                o[2 * w] = v;
                o[2 * w + 1] = v;
            }
        }
    }
    return op_result(Op::Upsample2x, Shape{n, c, 2 * h, 2 * w}, std::move(y), {x});
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require(pred.size() == target.size(), "mse_loss operands must have identical extents");
    const auto& p = pred.values();
    const auto& t = target.values();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        acc += d * d;
    }
    acc /= static_cast<double>(p.size());
    require(std::isfinite(acc), "mse_loss produced a non-finite value");
    return op_result(Op::MseLoss, Shape{1}, {acc}, {pred, target});
}

Tensor l2_norm(const Tensor& x) {
    const auto& v = x.values();
    double acc = 0.0;
    for (double e : v) acc += e * e;
    const double norm = std::sqrt(acc);
    require(std::isfinite(norm), "l2_norm produced a non-finite value");
    return op_result(Op::L2Norm, Shape{1}, {norm}, {x}, 0.0, 0, norm <= kKinkEps ? 1 : 0);
}

Tensor bce_loss(const Tensor& prob, const Tensor& target) {
    require(prob.size() == target.size(), "bce_loss operands must have identical extents");
    constexpr double eps = 1e-12;
    const auto& p = prob.values();
    const auto& t = target.values();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double pc = std::min(1.0 - eps, std::max(eps, p[i]));
        acc -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
    }
    acc /= static_cast<double>(p.size());
    require(std::isfinite(acc), "bce_loss produced a non-finite value");
    return op_result(Op::BceLoss, Shape{1}, {acc}, {prob, target});
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    require(lo <= hi, "clamp bounds must satisfy lo <= hi");
    std::vector<double> y = x.values();
    for (double& v : y) v = std::min(hi, std::max(lo, v));
    return Tensor(x.shape(), std::move(y), false);
}

long long relu_regime_mismatch(const Tensor& a, const Tensor& b) {
    const Node* ra = unwrap(a);
    const Node* rb = unwrap(b);
    long long mismatches = 0;
    std::vector<std::pair<const Node*, const Node*>> stack{{ra, rb}};
    std::unordered_set<const Node*> seen;
    while (!stack.empty()) {
        auto [na, nb] = stack.back();
        stack.pop_back();
        if (!seen.insert(na).second) continue;
        if (nb->op != na->op || nb->inputs.size() != na->inputs.size()) {
            throw std::invalid_argument("relu_regime_mismatch requires identical graph shapes");
        }
        if (na->op == Op::Relu) {
            const auto& xa = na->inputs[0]->value;
            const auto& xb = nb->inputs[0]->value;
            if (xa.size() != xb.size()) {
                throw std::invalid_argument("relu_regime_mismatch requires identical graph shapes");
            }
            for (size_t i = 0; i < xa.size(); ++i) {
                if ((xa[i] > 0.0) != (xb[i] > 0.0)) ++mismatches;
            }
        }
        for (size_t i = 0; i < na->inputs.size(); ++i) {
            stack.emplace_back(na->inputs[i].get(), nb->inputs[i].get());
        }
    }
    return mismatches;
}

namespace {

// Gradient buffers for one backward sweep. Leaf gradients accumulate into
// the persistent node storage; intermediate gradients live only in the map
// so repeated sweeps over the same graph stay independent.
struct GradSink {
    std::unordered_map<Node*, std::vector<double>> tmp;

    double* of(Node* n) {
        if (n->op == Op::Leaf) {
            n->ensure_grad();
            return n->grad.data();
        }
        auto it = tmp.find(n);
        if (it == tmp.end()) {
            it = tmp.emplace(n, std::vector<double>(n->value.size(), 0.0)).first;
        }
        return it->second.data();
    }

    const double* read(Node* n) const {
        if (n->op == Op::Leaf) return n->grad.data();
        auto it = tmp.find(n);
        return it == tmp.end() ? nullptr : it->second.data();
    }
};

void backward_node(Node* node, const double* gy, GradSink& sink) {
    auto needs = [](const std::shared_ptr<Node>& n) { return n->requires_grad; };
    switch (node->op) {
        case Op::Leaf:
            return;
        case Op::Dense: {
            Node* x = node->inputs[0].get();
            Node* w = node->inputs[1].get();
            Node* b = node->inputs[2].get();
            const int n = x->shape[0], in = x->shape[1], out = w->shape[0];
            if (needs(node->inputs[0])) {
                double* gx = sink.of(x);
                for (int i = 0; i < n; ++i) {
                    const double* gyr = gy + static_cast<size_t>(i) * out;
                    double* gxr = gx + static_cast<size_t>(i) * in;
                    for (int o = 0; o < out; ++o) {
                        const double g = gyr[o];
                        if (g == 0.0) continue;
                        const double* wr = w->value.data() + static_cast<size_t>(o) * in;
                        for (int j = 0; j < in; ++j) gxr[j] += g * wr[j];
                    }
                }
            }
            if (needs(node->inputs[1])) {
                double* gw = sink.of(w);
                for (int i = 0; i < n; ++i) {
                    const double* gyr = gy + static_cast<size_t>(i) * out;
                    const double* xr = x->value.data() + static_cast<size_t>(i) * in;
                    for (int o = 0; o < out; ++o) {
                        const double g = gyr[o];
                        if (g == 0.0) continue;
                        double* gwr = gw + static_cast<size_t>(o) * in;
                        for (int j = 0; j < in; ++j) gwr[j] += g * xr[j];
                    }
                }
            }
            if (needs(node->inputs[2])) {
                double* gb = sink.of(b);
                for (int i = 0; i < n; ++i) {
                    const double* gyr = gy + static_cast<size_t>(i) * out;
                    for (int o = 0; o < out; ++o) gb[o] += gyr[o];
                }
            }
            return;
        }
        case Op::Conv2d: {
            Node* x = node->inputs[0].get();
            Node* w = node->inputs[1].get();
            Node* b = node->inputs[2].get();
            const ConvDims d = conv_dims(x->shape, w->shape, node->iattr);
            const bool need_x = needs(node->inputs[0]);
            const bool need_w = needs(node->inputs[1]);
            double* gx = need_x ? sink.of(x) : nullptr;
            double* gw = need_w ? sink.of(w) : nullptr;
            if (needs(node->inputs[2])) {
                double* gb = sink.of(b);
                for (int n = 0; n < d.n; ++n) {
                    for (int k = 0; k < d.k; ++k) {
                        const double* gmap = gy + (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
                        double acc = 0.0;
                        for (int i = 0; i < d.oh * d.ow; ++i) acc += gmap[i];
                        gb[k] += acc;
                    }
                }
            }
            if (!need_x && !need_w) return;
            for (int n = 0; n < d.n; ++n) {
                for (int k = 0; k < d.k; ++k) {
                    const double* gmap = gy + (static_cast<size_t>(n) * d.k + k) * d.oh * d.ow;
                    for (int c = 0; c < d.c; ++c) {
                        const size_t in_off = (static_cast<size_t>(n) * d.c + c) * d.h * d.w;
                        const size_t k_off = (static_cast<size_t>(k) * d.c + c) * d.r * d.s;
                        const double* in_map = x->value.data() + in_off;
                        const double* ker = w->value.data() + k_off;
                        for (int r = 0; r < d.r; ++r) {
                            for (int s = 0; s < d.s; ++s) {
                                int lo = 0, hi = 0;
                                col_range(d, s, lo, hi);
                                const double wv = ker[r * d.s + s];
                                double acc_w = 0.0;
                                for (int oy = 0; oy < d.oh; ++oy) {
                                    const int iy = oy * d.stride + r - d.pad_top;
                                    if (iy < 0 || iy >= d.h) continue;
                                    const double* grow = gmap + static_cast<size_t>(oy) * d.ow;
                                    const size_t row = static_cast<size_t>(iy) * d.w;
                                    int ix = lo * d.stride + s - d.pad_left;
                                    if (need_x && need_w) {
                                        const double* xrow = in_map + row;
                                        double* gxrow = gx + in_off + row;
                                        for (int ox = lo; ox < hi; ++ox, ix += d.stride) {
                                            const double g = grow[ox];
                                            gxrow[ix] += g * wv;
                                            acc_w += g * xrow[ix];
                                        }
                                    } else if (need_x) {
                                        double* gxrow = gx + in_off + row;
                                        for (int ox = lo; ox < hi; ++ox, ix += d.stride) {
                                            gxrow[ix] += grow[ox] * wv;
                                        }
                                    } else {
                                        const double* xrow = in_map + row;
                                        for (int ox = lo; ox < hi; ++ox, ix += d.stride) {
                                            acc_w += grow[ox] * xrow[ix];
                                        }
                                    }
                                }
                                if (need_w) gw[k_off + r * d.s + s] += acc_w;
                            }
                        }
                    }
                }
            }
            return;
        }
        case Op::Relu: {
            if (!needs(node->inputs[0])) return;
            Node* x = node->inputs[0].get();
            double* gx = sink.of(x);
            for (size_t i = 0; i < x->value.size(); ++i) {
                if (x->value[i] > 0.0) gx[i] += gy[i];
            }
            return;
        }
        case Op::Tanh: {
            if (!needs(node->inputs[0])) return;
            double* gx = sink.of(node->inputs[0].get());
            for (size_t i = 0; i < node->value.size(); ++i) {
                gx[i] += gy[i] * (1.0 - node->value[i] * node->value[i]);
            }
            return;
        }
        case Op::Sigmoid: {
            if (!needs(node->inputs[0])) return;
            double* gx = sink.of(node->inputs[0].get());
            for (size_t i = 0; i < node->value.size(); ++i) {
                const double y = node->value[i];
                gx[i] += gy[i] * y * (1.0 - y);
            }
            return;
        }
        case Op::Flatten: {
            if (!needs(node->inputs[0])) return;
            double* gx = sink.of(node->inputs[0].get());
            for (size_t i = 0; i < node->value.size(); ++i) gx[i] += gy[i];
            return;
        }
        case Op::Add: {
            for (int which = 0; which < 2; ++which) {
                if (!needs(node->inputs[which])) continue;
                double* g = sink.of(node->inputs[which].get());
                for (size_t i = 0; i < node->value.size(); ++i) g[i] += gy[i];
            }
            return;
        }
        case Op::Sub: {
            if (needs(node->inputs[0])) {
                double* g = sink.of(node->inputs[0].get());
                for (size_t i = 0; i < node->value.size(); ++i) g[i] += gy[i];
            }
            if (needs(node->inputs[1])) {
                double* g = sink.of(node->inputs[1].get());
                for (size_t i = 0; i < node->value.size(); ++i) g[i] -= gy[i];
            }
            return;
        }
        case Op::Scale: {
            if (!needs(node->inputs[0])) return;
            double* gx = sink.of(node->inputs[0].get());
            for (size_t i = 0; i < node->value.size(); ++i) gx[i] += gy[i] * node->attr;
            return;
        }
        case Op::Upsample2x: {
            if (!needs(node->inputs[0])) return;
            Node* x = node->inputs[0].get();
            const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
            double* gx = sink.of(x);
            for (int m = 0; m < n * c; ++m) {
                const double* gmap = gy + static_cast<size_t>(m) * 4 * h * w;
                double* gxm = gx + static_cast<size_t>(m) * h * w;
                for (int iy = 0; iy < h; ++iy) {
                    for (int ix = 0; ix < w; ++ix) {
                        const double* g = gmap + (2 * iy) * (2 * w) + 2 * ix;
                        gxm[iy * w + ix] += g[0] + g[1] + g[2 * w] + g[2 * w + 1];
                    }
                }
            }
            return;
        }
        case Op::MseLoss: {
            Node* p = node->inputs[0].get();
            Node* t = node->inputs[1].get();
            const double g = gy[0] * 2.0 / static_cast<double>(p->value.size());
            if (needs(node->inputs[0])) {
                double* gp = sink.of(p);
                for (size_t i = 0; i < p->value.size(); ++i) {
                    gp[i] += g * (p->value[i] - t->value[i]);
                }
            }
            if (needs(node->inputs[1])) {
                double* gt = sink.of(t);
                for (size_t i = 0; i < p->value.size(); ++i) {
                    gt[i] -= g * (p->value[i] - t->value[i]);
                }
            }
            return;
        }
        case Op::L2Norm: {
            if (!needs(node->inputs[0])) return;
            Node* x = node->inputs[0].get();
            const double norm = node->value[0];
            if (norm <= 1e-12) return;  // subgradient 0 at the kink
            double* gx = sink.of(x);
            const double g = gy[0] / norm;
            for (size_t i = 0; i < x->value.size(); ++i) gx[i] += g * x->value[i];
            return;
        }
        case Op::BceLoss: {
            constexpr double eps = 1e-12;
            Node* p = node->inputs[0].get();
            Node* t = node->inputs[1].get();
            const double inv_m = 1.0 / static_cast<double>(p->value.size());
            if (needs(node->inputs[0])) {
                double* gp = sink.of(p);
                for (size_t i = 0; i < p->value.size(); ++i) {
                    const double pc = std::min(1.0 - eps, std::max(eps, p->value[i]));
                    gp[i] += gy[0] * inv_m * (pc - t->value[i]) / (pc * (1.0 - pc));
                }
            }
            if (needs(node->inputs[1])) {
                double* gt = sink.of(t);
                for (size_t i = 0; i < p->value.size(); ++i) {
                    const double pc = std::min(1.0 - eps, std::max(eps, p->value[i]));
                    gt[i] += gy[0] * inv_m * (std::log(1.0 - pc) - std::log(pc));
                }
            }
            return;
        }
    }
}

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;  // 0 new, 1 open, 2 done
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next == 0) {
            int& st = state[node];
            if (st == 2) {
                stack.pop_back();
                continue;
            }
            st = 1;
        }
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (state[child] == 0) stack.emplace_back(child, 0);
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void run_backward(Node* root, const std::vector<double>& seed) {
    if (root->op == Op::Leaf) {
        throw std::invalid_argument("backward requires a tensor produced by recorded ops");
    }
    metrics::g_backward_passes.fetch_add(1);
    if (!root->requires_grad) return;
    GradSink sink;
    std::vector<Node*> order = topo_order(root);
    {
        double* g = sink.of(root);
        for (size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->requires_grad || node->op == Op::Leaf) continue;
        const double* gy = sink.read(node);
        if (gy == nullptr) continue;
        backward_node(node, gy, sink);
    }
    // A leaf's gradient may be exactly zero (dead relu region, norm kink);
    // it must still exist after the sweep.
    for (Node* node : order) {
        if (node->op == Op::Leaf && node->requires_grad) node->ensure_grad();
    }
}

}  // namespace

void Tensor::backward() const {
    require(defined(), "undefined tensor");
    require(size() == 1, "backward requires a single-element loss");
    run_backward(node_.get(), {1.0});
}

void Tensor::backward(const std::vector<double>& seed_grad) const {
    require(defined(), "undefined tensor");
    require(static_cast<long long>(seed_grad.size()) == size(),
            "backward seed gradient shape mismatch");
    run_backward(node_.get(), seed_grad);
}

}  // namespace advdrive
