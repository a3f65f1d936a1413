#include "advdrive/model.hpp"

#include <cmath>
#include <stdexcept>

#include "advdrive/parallel.hpp"
#include "advdrive/rng.hpp"

namespace advdrive {

namespace {

std::vector<LayerDef> arch_layers(ArchId arch) {
    using K = LayerDef::Kind;
    switch (arch) {
        case ArchId::EpochS:
            return {{K::Conv, 12, 2}, {K::Conv, 16, 2}, {K::Conv, 20, 2},
                    {K::Dense, 40, 1}, {K::Dense, 1, 1}};
        case ArchId::DaveS:
            return {{K::Conv, 8, 2},  {K::Conv, 10, 2}, {K::Conv, 12, 2}, {K::Conv, 12, 1},
                    {K::Conv, 12, 2}, {K::Dense, 24, 1}, {K::Dense, 10, 1}, {K::Dense, 1, 1}};
        case ArchId::DeepS:
            return {{K::Conv, 12, 2}, {K::Conv, 16, 2}, {K::Conv, 20, 2}, {K::Conv, 24, 1},
                    {K::Conv, 28, 2}, {K::Conv, 32, 1}, {K::Conv, 32, 1}, {K::Conv, 32, 1},
                    {K::Dense, 96, 1}, {K::Dense, 24, 1}, {K::Dense, 1, 1}};
    }
    throw std::invalid_argument("unknown architecture");
}

void check_input_size(int input_size) {
    if (input_size != 64 && input_size != 128) {
        throw std::invalid_argument("input_size must be 64 or 128");
    }
}

struct ParamSpec {
    std::string name;
    Shape shape;
    int fan_in;
};

std::vector<ParamSpec> param_specs(ArchId arch, int input_size) {
    check_input_size(input_size);
    std::vector<ParamSpec> specs;
    int channels = 3;
    int spatial = input_size;
    int dense_in = 0;
    bool flattened = false;
    int conv_i = 0, dense_i = 0;
    for (const LayerDef& layer : arch_layers(arch)) {
        if (layer.kind == LayerDef::Kind::Conv) {
            const std::string base = "conv" + std::to_string(conv_i++);
            specs.push_back({base + ".weight", Shape{layer.out, channels, 3, 3}, channels * 9});
            specs.push_back({base + ".bias", Shape{layer.out}, channels * 9});
            channels = layer.out;
            spatial = (spatial + layer.stride - 1) / layer.stride;
        } else {
            if (!flattened) {
                dense_in = channels * spatial * spatial;
                flattened = true;
            }
            const std::string base = "dense" + std::to_string(dense_i++);
            specs.push_back({base + ".weight", Shape{layer.out, dense_in}, dense_in});
            specs.push_back({base + ".bias", Shape{layer.out}, dense_in});
            dense_in = layer.out;
        }
    }
    return specs;
}

}  // namespace

std::string arch_name(ArchId id) {
    switch (id) {
        case ArchId::EpochS: return "epoch_s";
        case ArchId::DaveS: return "dave_s";
        case ArchId::DeepS: return "deep_s";
    }
    throw std::invalid_argument("unknown architecture");
}

ArchId arch_from_name(const std::string& name) {
    if (name == "epoch_s") return ArchId::EpochS;
    if (name == "dave_s") return ArchId::DaveS;
    if (name == "deep_s") return ArchId::DeepS;
    throw std::invalid_argument("unknown architecture: " + name);
}

RegressionModel build_model(ArchId arch, int input_size, uint64_t seed) {
    RegressionModel m;
    m.arch_id_ = arch;
    m.input_size_ = input_size;
    m.layers_ = arch_layers(arch);
    Rng rng(derive_seed(seed, 0xA12Cu));
    for (const ParamSpec& spec : param_specs(arch, input_size)) {
        const long long n = numel(spec.shape);
        std::vector<double> values(n, 0.0);
        const bool is_bias = spec.shape.size() == 1;
        if (!is_bias) {
            const double limit = std::sqrt(6.0 / spec.fan_in);
            for (double& v : values) v = rng.uniform(-limit, limit);
        }
        m.params_.emplace_back(spec.shape, std::move(values), true);
    }
    return m;
}

RegressionModel assemble_model(ArchId arch, int input_size, std::vector<Tensor> params) {
    const std::vector<ParamSpec> specs = param_specs(arch, input_size);
    if (params.size() != specs.size()) {
        throw std::runtime_error("parameter list does not match architecture");
    }
    for (size_t i = 0; i < specs.size(); ++i) {
        if (params[i].shape() != specs[i].shape) {
            throw std::runtime_error("parameter shape does not match architecture");
        }
    }
    RegressionModel m;
    m.arch_id_ = arch;
    m.input_size_ = input_size;
    m.layers_ = arch_layers(arch);
    m.params_ = std::move(params);
    return m;
}

std::vector<std::pair<std::string, Shape>> param_manifest(ArchId arch, int input_size) {
    std::vector<std::pair<std::string, Shape>> manifest;
    for (const ParamSpec& spec : param_specs(arch, input_size)) {
        manifest.emplace_back(spec.name, spec.shape);
    }
    return manifest;
}

long long RegressionModel::param_count() const {
    long long n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
}

int RegressionModel::feature_dim() const {
    // Output width of the last hidden dense layer.
    int dim = 0;
    for (size_t i = 0; i + 1 < layers_.size(); ++i) {
        if (layers_[i].kind == LayerDef::Kind::Dense) dim = layers_[i].out;
    }
    return dim;
}

std::pair<Tensor, Tensor> RegressionModel::forward_with_tap(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != input_size_ || s[3] != input_size_) {
        throw std::invalid_argument("model input must be [N,3," + std::to_string(input_size_) +
                                    "," + std::to_string(input_size_) + "]");
    }
    Tensor t = x;
    Tensor tap;
    size_t p = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const LayerDef& layer = layers_[i];
        const Tensor& w = params_[p];
        const Tensor& b = params_[p + 1];
        p += 2;
        if (layer.kind == LayerDef::Kind::Conv) {
            t = relu(conv2d(t, w, b, layer.stride));
        } else {
            if (t.shape().size() == 4) t = flatten(t);
            if (i + 1 == layers_.size()) {
                t = tanh(dense(t, w, b));
            } else {
                t = relu(dense(t, w, b));
                tap = t;
            }
        }
    }
    return {t, tap};
}

Tensor RegressionModel::forward(const Tensor& x) const { return forward_with_tap(x).first; }

RegressionModel RegressionModel::clone() const {
    RegressionModel m;
    m.arch_id_ = arch_id_;
    m.input_size_ = input_size_;
    m.layers_ = layers_;
    for (const Tensor& p : params_) {
        m.params_.emplace_back(p.shape(), p.values(), p.requires_grad());
    }
    return m;
}

RegressionModel RegressionModel::clone_frozen() const {
    RegressionModel m;
    m.arch_id_ = arch_id_;
    m.input_size_ = input_size_;
    m.layers_ = layers_;
    for (const Tensor& p : params_) {
        m.params_.emplace_back(p.shape(), p.values(), false);
    }
    return m;
}

void RegressionModel::zero_grads() {
    for (Tensor& p : params_) {
        p.mutable_grad();
        p.zero_grad();
    }
}

void RegressionModel::load_values_from(const RegressionModel& other) {
    if (other.params_.size() != params_.size()) {
        throw std::invalid_argument("model parameter lists differ");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        params_[i].mutable_values() = other.params_[i].values();
    }
}

double predict(const DifferentiableModel& model, const Image& image) {
    if (image.height != model.input_size() || image.width != model.input_size()) {
        throw std::invalid_argument("image size does not match model input size");
    }
    if (!in_unit_range(image)) {
        throw std::invalid_argument("image pixels must lie in [0,1]");
    }
    return model.forward(image_to_tensor(image)).item();
}

std::vector<double> train_loop(RegressionModel& model, size_t n_samples,
                               const SampleLoss& loss_fn, const TrainConfig& cfg) {
    if (n_samples == 0) throw std::invalid_argument("training dataset is empty");
    if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    const int jobs = std::max(1, cfg.jobs);

    OptimizerState opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5fu));
    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < n_samples; ++i) order[i] = i;

    std::vector<RegressionModel> replicas;
    replicas.reserve(jobs);
    for (int w = 0; w < jobs; ++w) replicas.push_back(model.clone());

    std::vector<double> history;
    history.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < n_samples; start += cfg.batch_size) {
            const size_t m = std::min<size_t>(cfg.batch_size, n_samples - start);
            const size_t workers = std::min<size_t>(jobs, m);
            std::vector<double> worker_loss(workers, 0.0);
            for (size_t w = 0; w < workers; ++w) {
                replicas[w].load_values_from(model);
                replicas[w].zero_grads();
            }
            const double inv_m = 1.0 / static_cast<double>(m);
            parallel_for(workers, static_cast<int>(workers), [&](size_t w) {
                const size_t lo = m * w / workers;
                const size_t hi = m * (w + 1) / workers;
                for (size_t i = lo; i < hi; ++i) {
                    Tensor loss = scale(loss_fn(replicas[w], order[start + i]), inv_m);
                    loss.backward();
                    worker_loss[w] += loss.item();
                }
            });
            model.zero_grads();
            for (size_t w = 0; w < workers; ++w) {
                for (size_t p = 0; p < model.params().size(); ++p) {
                    const std::vector<double>& src = replicas[w].params()[p].grad();
                    std::vector<double>& dst = model.params()[p].mutable_grad();
                    for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
                epoch_loss += worker_loss[w];
            }
            optimizer_step(model.params(), opt);
            ++batches;
        }
        history.push_back(epoch_loss / static_cast<double>(batches));
        model.zero_grads();
    }
    return history;
}

std::vector<double> train_model(RegressionModel& model, const Dataset& data,
                                const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("training dataset is empty");
    for (const Sample& s : data.samples) {
        if (!(s.angle >= -1.0 && s.angle <= 1.0)) {
            throw std::invalid_argument("training labels must lie in [-1,1]");
        }
    }
    const SampleLoss loss = [&data](const RegressionModel& replica, size_t i) {
        const Sample& s = data.samples[i];
        Tensor pred = replica.forward(image_to_tensor(s.image));
        return mse_loss(pred, Tensor::scalar(s.angle));
    };
    return train_loop(model, data.size(), loss, cfg);
}

double eval_rmse(const DifferentiableModel& model, const Dataset& data, int jobs) {
    if (data.empty()) throw std::invalid_argument("eval dataset is empty");
    std::vector<double> sq(data.size());
    parallel_for(data.size(), jobs, [&](size_t i) {
        const double d = predict(model, data.samples[i].image) - data.samples[i].angle;
        sq[i] = d * d;
    });
    double acc = 0.0;
    for (double v : sq) acc += v;
    return std::sqrt(acc / static_cast<double>(data.size()));
}

double zero_predictor_rmse(const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("eval dataset is empty");
    double acc = 0.0;
    for (const Sample& s : data.samples) acc += s.angle * s.angle;
    return std::sqrt(acc / static_cast<double>(data.size()));
}

}  // namespace advdrive
