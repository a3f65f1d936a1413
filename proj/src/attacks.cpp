#include "advdrive/attacks.hpp"

#include <cmath>
#include <stdexcept>

#include "advdrive/parallel.hpp"
#include "advdrive/rng.hpp"

namespace advdrive {

namespace {

void check_image(const DifferentiableModel& model, const Image& image) {
    if (image.height != model.input_size() || image.width != model.input_size()) {
        throw std::invalid_argument("attack image size does not match model input size");
    }
}

void check_delta(double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("adversarial threshold must be positive");
}

AdversarialExample finish_example(const DifferentiableModel& model, const Image& original,
                                  const Image& adversarial, double pred_original, double delta,
                                  int iterations, AttackId id) {
    AdversarialExample ex;
    ex.original = original;
    ex.adversarial = adversarial;
    ex.perturbation = sub(adversarial, original);
    ex.pred_original = pred_original;
    ex.pred_adversarial = predict(model, adversarial);
    ex.deviation = std::fabs(ex.pred_adversarial - ex.pred_original);
    ex.success = is_success(ex.pred_original, ex.pred_adversarial, delta);
    ex.iterations_used = iterations;
    ex.attack_id = id;
    return ex;
}

struct OptRun {
    Image best_adversarial;
    double best_deviation = -1.0;
    Image final_perturbation;  // projected perturbation of the last iterate
    int iterations = 0;
};

// Core of the optimization attack. The perturbation starts from `eps0`
// (zeros for the plain attack, the current universal grid for warm
// starts); between iterations it is projected so x+eps stays in [0,1].
OptRun opt_core(const DifferentiableModel& model, const Image& image, const AttackConfig& cfg,
                const Image& eps0, double pred_original) {
    const double target = pred_original + cfg.target_sign * cfg.delta;
    Tensor x_const = image_to_tensor(image);
    Tensor eps = Tensor(Shape{1, 3, image.height, image.width}, eps0.data, true);
    OptimizerState opt = make_optimizer(OptimizerKind::Adam, cfg.opt_lr);
    std::vector<Tensor> eps_params{eps};

    OptRun run;
    for (int step = 0;; ++step) {
        {  // project: keep x + eps inside the image box (outside the graph)
            std::vector<double>& e = eps.mutable_values();
            for (size_t i = 0; i < e.size(); ++i) {
                const double clipped = std::min(1.0, std::max(0.0, image.data[i] + e[i]));
                e[i] = clipped - image.data[i];
            }
        }
        Tensor adv = add(x_const, eps);
        Tensor pred = model.forward(adv);
        const double deviation = std::fabs(pred.item() - pred_original);
        if (deviation > run.best_deviation) {
            run.best_deviation = deviation;
            run.best_adversarial = tensor_to_image(adv);
        }
        if (deviation >= cfg.delta || step == cfg.opt_max_iters) {
            run.final_perturbation = tensor_to_image(eps);
            run.iterations = step;
            return run;
        }
        Tensor objective = add(l2_norm(eps), mse_loss(pred, Tensor::scalar(target)));
        eps.zero_grad();
        objective.backward();
        adam_step(eps_params, opt);
    }
}

}  // namespace

std::string attack_name(AttackId id) {
    switch (id) {
        case AttackId::ItFgsm: return "it_fgsm";
        case AttackId::Opt: return "opt";
        case AttackId::OptUni: return "opt_uni";
        case AttackId::AdvGan: return "advgan";
        case AttackId::AdvGanUni: return "advgan_uni";
    }
    throw std::invalid_argument("unknown attack");
}

AttackId attack_from_name(const std::string& name) {
    if (name == "it_fgsm") return AttackId::ItFgsm;
    if (name == "opt") return AttackId::Opt;
    if (name == "opt_uni") return AttackId::OptUni;
    if (name == "advgan") return AttackId::AdvGan;
    if (name == "advgan_uni") return AttackId::AdvGanUni;
    throw std::invalid_argument("unknown attack: " + name);
}

bool is_success(double pred_original, double pred_adversarial, double delta) {
    check_delta(delta);
    return std::fabs(pred_adversarial - pred_original) >= delta;
}

AdversarialExample it_fgsm(const DifferentiableModel& model, const Image& image,
                           const AttackConfig& cfg) {
    check_image(model, image);
    check_delta(cfg.delta);
    if (cfg.fgsm_iters < 1) throw std::invalid_argument("fgsm_iters must be >= 1");

    const double pred_original = predict(model, image);
    const double target = pred_original + cfg.target_sign * cfg.delta;
    Image adv = image;
    for (int it = 0; it < cfg.fgsm_iters; ++it) {
        Tensor x = image_to_tensor(adv, true);
        Tensor loss = mse_loss(model.forward(x), Tensor::scalar(target));
        loss.backward();
        const std::vector<double>& g = x.grad();
        for (size_t i = 0; i < adv.data.size(); ++i) {
            const double step = g[i] > 0.0 ? cfg.fgsm_epsilon : (g[i] < 0.0 ? -cfg.fgsm_epsilon : 0.0);
            adv.data[i] = std::min(1.0, std::max(0.0, adv.data[i] - step));
        }
    }
    return finish_example(model, image, adv, pred_original, cfg.delta, cfg.fgsm_iters,
                          AttackId::ItFgsm);
}

AdversarialExample opt_attack(const DifferentiableModel& model, const Image& image,
                              const AttackConfig& cfg) {
    check_image(model, image);
    check_delta(cfg.delta);
    if (cfg.opt_max_iters < 1) throw std::invalid_argument("opt_max_iters must be >= 1");

    const double pred_original = predict(model, image);
    Image zeros(image.height, image.width);
    OptRun run = opt_core(model, image, cfg, zeros, pred_original);
    return finish_example(model, image, run.best_adversarial, pred_original, cfg.delta,
                          run.iterations, AttackId::Opt);
}

UniversalPerturbation universal_perturbation(const DifferentiableModel& model,
                                             const Dataset& dataset, const AttackConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("universal crafting needs a nonempty dataset");
    check_delta(cfg.delta);

    // Original predictions are reused by the crafting loop and the final
    // fooling-rate pass.
    std::vector<double> pred_orig(dataset.size());
    parallel_for(dataset.size(), cfg.jobs, [&](size_t i) {
        pred_orig[i] = predict(model, dataset.samples[i].image);
    });

    UniversalPerturbation result;
    {
        const Image& first = dataset.samples[0].image;
        check_image(model, first);
        Image zeros(first.height, first.width);
        OptRun run = opt_core(model, first, cfg, zeros, pred_orig[0]);
        result.perturbation = clamp(sub(run.best_adversarial, first), -cfg.perturb_clip,
                                    cfg.perturb_clip);
    }
    for (size_t i = 1; i < dataset.size(); ++i) {
        const Image& x = dataset.samples[i].image;
        const Image adv = clamp01(add(x, result.perturbation));
        if (std::fabs(predict(model, adv) - pred_orig[i]) >= cfg.delta) continue;
        OptRun run = opt_core(model, x, cfg, result.perturbation, pred_orig[i]);
        result.perturbation =
            clamp(run.final_perturbation, -cfg.perturb_clip, cfg.perturb_clip);
        ++result.samples_adapted;
    }

    std::vector<int> fooled(dataset.size(), 0);
    parallel_for(dataset.size(), cfg.jobs, [&](size_t i) {
        const Image adv = clamp01(add(dataset.samples[i].image, result.perturbation));
        fooled[i] = std::fabs(predict(model, adv) - pred_orig[i]) >= cfg.delta ? 1 : 0;
    });
    int n_fooled = 0;
    for (int f : fooled) n_fooled += f;
    result.crafting_fooling_rate = static_cast<double>(n_fooled) / dataset.size();
    return result;
}

// ---------------------------------------------------------------------------
// AdvGAN

namespace {

struct GenLayer {
    int out;
    int stride;     // encoder stride-2 convs
    bool upsample;  // decoder: nearest 2x before the conv
    bool final;     // tanh head instead of relu
};

const GenLayer kGenLayers[] = {
    {8, 2, false, false},  {12, 2, false, false}, {16, 2, false, false},
    {8, 1, true, false},   {6, 1, true, false},   {3, 1, true, true},
};

std::vector<Tensor> init_conv_stack(const std::vector<std::pair<int, int>>& in_out, Rng& rng) {
    std::vector<Tensor> params;
    for (auto [in, out] : in_out) {
        const double limit = std::sqrt(6.0 / (in * 9));
        std::vector<double> w(static_cast<size_t>(out) * in * 9);
        for (double& v : w) v = rng.uniform(-limit, limit);
        params.emplace_back(Shape{out, in, 3, 3}, std::move(w), true);
        params.emplace_back(Shape{out}, std::vector<double>(out, 0.0), true);
    }
    return params;
}

// 3 stride-2 convs, dense head, sigmoid: P(input is an unperturbed frame).
struct Discriminator {
    std::vector<Tensor> params;
    int input_size = 64;

    static Discriminator build(int input_size, uint64_t seed) {
        Discriminator d;
        d.input_size = input_size;
        Rng rng(seed);
        d.params = init_conv_stack({{3, 8}, {8, 12}, {12, 16}}, rng);
        const int spatial = input_size / 8;
        const int in_dim = 16 * spatial * spatial;
        const double limit = std::sqrt(6.0 / in_dim);
        std::vector<double> w(in_dim);
        for (double& v : w) v = rng.uniform(-limit, limit);
        d.params.emplace_back(Shape{1, in_dim}, std::move(w), true);
        d.params.emplace_back(Shape{1}, std::vector<double>{0.0}, true);
        return d;
    }

    Tensor forward(const Tensor& x) const {
        Tensor t = x;
        for (int i = 0; i < 3; ++i) {
            t = relu(conv2d(t, params[2 * i], params[2 * i + 1], 2));
        }
        return sigmoid(dense(flatten(t), params[6], params[7]));
    }

    void zero_grads() {
        for (Tensor& p : params) {
            p.mutable_grad();
            p.zero_grad();
        }
    }
};

}  // namespace

std::vector<Shape> Generator::param_shapes(int /*input_size*/) {
    std::vector<Shape> shapes;
    int in = 3;
    for (const GenLayer& layer : kGenLayers) {
        shapes.push_back(Shape{layer.out, in, 3, 3});
        shapes.push_back(Shape{layer.out});
        in = layer.out;
    }
    return shapes;
}

Generator Generator::build(int input_size, double perturb_clip, GanMode mode, uint64_t param_seed,
                           uint64_t noise_seed) {
    if (input_size % 8 != 0) {
        throw std::invalid_argument("generator input size must be divisible by 8");
    }
    if (!(perturb_clip > 0.0)) throw std::invalid_argument("perturb_clip must be positive");
    Generator g;
    g.mode_ = mode;
    g.input_size_ = input_size;
    g.clip_ = perturb_clip;
    g.noise_seed_ = noise_seed;
    Rng rng(param_seed);
    int in = 3;
    for (const GenLayer& layer : kGenLayers) {
        const double limit = std::sqrt(6.0 / (in * 9));
        std::vector<double> w(static_cast<size_t>(layer.out) * in * 9);
        for (double& v : w) v = rng.uniform(-limit, limit);
        g.params_.emplace_back(Shape{layer.out, in, 3, 3}, std::move(w), true);
        g.params_.emplace_back(Shape{layer.out}, std::vector<double>(layer.out, 0.0), true);
        in = layer.out;
    }
    if (mode == GanMode::Universal) {
        Rng noise_rng(noise_seed);
        std::vector<double> n(static_cast<size_t>(3) * input_size * input_size);
        for (double& v : n) v = noise_rng.normal();
        g.noise_ = Tensor(Shape{1, 3, input_size, input_size}, std::move(n), false);
    }
    return g;
}

Tensor Generator::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != input_size_ || s[3] != input_size_) {
        throw std::invalid_argument("generator input shape mismatch");
    }
    Tensor t = x;
    size_t p = 0;
    for (const GenLayer& layer : kGenLayers) {
        if (layer.upsample) t = upsample2x(t);
        t = conv2d(t, params_[p], params_[p + 1], layer.stride);
        p += 2;
        t = layer.final ? scale(tanh(t), clip_) : relu(t);
    }
    return t;
}

Image Generator::generate(const Image& x) const {
    metrics::add_generator_pass();
    if (mode_ == GanMode::Universal) return tensor_to_image(forward(noise_));
    return tensor_to_image(forward(image_to_tensor(x)));
}

Image Generator::universal_output() const {
    if (mode_ != GanMode::Universal) {
        throw std::invalid_argument("universal_output requires a universal-mode generator");
    }
    return tensor_to_image(forward(noise_));
}

GanTrainResult train_advgan(const DifferentiableModel& model, const Dataset& dataset,
                            const AttackConfig& cfg, GanMode mode) {
    if (dataset.empty()) throw std::invalid_argument("advgan training needs a nonempty dataset");
    check_delta(cfg.delta);
    const int input_size = model.input_size();
    for (const Sample& s : dataset.samples) check_image(model, s.image);

    Generator gen = Generator::build(input_size, cfg.perturb_clip, mode,
                                     derive_seed(cfg.seed, 0x6e6eu), derive_seed(cfg.seed, 0x01u));
    Discriminator disc = Discriminator::build(input_size, derive_seed(cfg.seed, 0xd15cu));
    OptimizerState gen_opt = make_optimizer(OptimizerKind::Adam, cfg.gan_lr);
    OptimizerState disc_opt = make_optimizer(OptimizerKind::Adam, cfg.gan_lr);

    std::vector<double> targets(dataset.size());
    parallel_for(dataset.size(), cfg.jobs, [&](size_t i) {
        targets[i] = predict(model, dataset.samples[i].image) + cfg.target_sign * cfg.delta;
    });

    Rng shuffle_rng(derive_seed(cfg.seed, 0x9a4u));
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const Tensor one = Tensor::scalar(1.0);
    const Tensor zero = Tensor::scalar(0.0);
    for (int epoch = 0; epoch < cfg.gan_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < dataset.size(); start += cfg.gan_batch) {
            const size_t m = std::min<size_t>(cfg.gan_batch, dataset.size() - start);
            const double inv_m = 1.0 / static_cast<double>(m);

            // Discriminator step: current generator output, detached.
            disc.zero_grads();
            Tensor gen_noise_out;
            if (mode == GanMode::Universal) gen_noise_out = gen.forward(gen.noise());
            for (size_t bi = 0; bi < m; ++bi) {
                const Sample& s = dataset.samples[order[start + bi]];
                Tensor x = image_to_tensor(s.image);
                Tensor real_loss = bce_loss(disc.forward(x), one);
                const Tensor gout = mode == GanMode::Universal ? gen_noise_out : gen.forward(x);
                const std::vector<double>& g = gout.values();
                std::vector<double> adv_data(s.image.data.size());
                for (size_t j = 0; j < adv_data.size(); ++j) adv_data[j] = s.image.data[j] + g[j];
                Tensor adv = Tensor(Shape{1, 3, input_size, input_size}, std::move(adv_data));
                Tensor fake_loss = bce_loss(disc.forward(adv), zero);
                Tensor loss = scale(add(real_loss, fake_loss), 0.5 * inv_m);
                loss.backward();
            }
            adam_step(disc.params, disc_opt);

            // Generator step: J(f(x+G), target) + alpha * bce(D(x+G), real).
            for (Tensor& p : gen.params()) {
                p.mutable_grad();
                p.zero_grad();
            }
            if (mode == GanMode::Universal) {
                Tensor gout = gen.forward(gen.noise());
                Tensor gleaf = Tensor(gout.shape(), gout.values(), true);
                for (size_t bi = 0; bi < m; ++bi) {
                    const size_t idx = order[start + bi];
                    const Sample& s = dataset.samples[idx];
                    Tensor adv = add(image_to_tensor(s.image), gleaf);
                    Tensor pred = model.forward(adv);
                    Tensor loss = add(mse_loss(pred, Tensor::scalar(targets[idx])),
                                      scale(bce_loss(disc.forward(adv), one), cfg.gan_alpha));
                    scale(loss, inv_m).backward();
                }
                gout.backward(gleaf.grad());
            } else {
                for (size_t bi = 0; bi < m; ++bi) {
                    const size_t idx = order[start + bi];
                    const Sample& s = dataset.samples[idx];
                    Tensor x = image_to_tensor(s.image);
                    Tensor adv = add(x, gen.forward(x));
                    Tensor pred = model.forward(adv);
                    Tensor loss = add(mse_loss(pred, Tensor::scalar(targets[idx])),
                                      scale(bce_loss(disc.forward(adv), one), cfg.gan_alpha));
                    scale(loss, inv_m).backward();
                }
            }
            adam_step(gen.params(), gen_opt);
        }
    }

    GanTrainResult result;
    if (mode == GanMode::Universal) {
        result.universal_perturbation = gen.universal_output();
    }
    // Crafting-set success rate, measured through the serving path.
    std::vector<int> fooled(dataset.size(), 0);
    const Image uni = mode == GanMode::Universal ? result.universal_perturbation : Image();
    parallel_for(dataset.size(), cfg.jobs, [&](size_t i) {
        const Image& x = dataset.samples[i].image;
        const Image pert =
            mode == GanMode::Universal ? uni : tensor_to_image(gen.forward(image_to_tensor(x)));
        const Image adv = clamp01(add(x, pert));
        const double po = targets[i] - cfg.target_sign * cfg.delta;
        fooled[i] = std::fabs(predict(model, adv) - po) >= cfg.delta ? 1 : 0;
    });
    int n = 0;
    for (int f : fooled) n += f;
    result.crafting_success_rate = static_cast<double>(n) / dataset.size();
    result.generator = std::move(gen);
    return result;
}

AdversarialExample advgan_generate(const Generator& generator, const Image& image,
                                   const DifferentiableModel& model, double delta) {
    check_delta(delta);
    check_image(model, image);
    if (generator.input_size() != model.input_size()) {
        throw std::invalid_argument("generator input size does not match model");
    }
    const double pred_original = predict(model, image);
    const Image pert = generator.generate(image);
    const Image adv = clamp01(add(image, pert));
    return finish_example(model, image, adv, pred_original, delta, 0,
                          generator.mode() == GanMode::Universal ? AttackId::AdvGanUni
                                                                 : AttackId::AdvGan);
}

AdversarialExample apply_perturbation(const DifferentiableModel& model, const Image& image,
                                      const Image& v, double delta, AttackId attack_id) {
    check_delta(delta);
    check_image(model, image);
    if (!v.same_shape(image)) throw std::invalid_argument("perturbation shape mismatch");
    const double pred_original = predict(model, image);
    const Image adv = clamp01(add(image, v));
    return finish_example(model, image, adv, pred_original, delta, 0, attack_id);
}

}  // namespace advdrive
