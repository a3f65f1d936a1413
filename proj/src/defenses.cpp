#include "advdrive/defenses.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "advdrive/parallel.hpp"

namespace advdrive {

namespace {

// One adversarial twin per training sample, crafted against the original
// model. Universal and GAN attacks craft their artifact once, then serve.
std::vector<Image> precompute_adversarial(const RegressionModel& original, const Dataset& train,
                                          AttackId attack, const AttackConfig& cfg) {
    const RegressionModel frozen = original.clone_frozen();
    std::vector<Image> adv(train.size());
    switch (attack) {
        case AttackId::ItFgsm:
            parallel_for(train.size(), cfg.jobs, [&](size_t i) {
                adv[i] = it_fgsm(frozen, train.samples[i].image, cfg).adversarial;
            });
            break;
        case AttackId::Opt:
            parallel_for(train.size(), cfg.jobs, [&](size_t i) {
                adv[i] = opt_attack(frozen, train.samples[i].image, cfg).adversarial;
            });
            break;
        case AttackId::OptUni: {
            const UniversalPerturbation uni = universal_perturbation(frozen, train, cfg);
            parallel_for(train.size(), cfg.jobs, [&](size_t i) {
                adv[i] = clamp01(add(train.samples[i].image, uni.perturbation));
            });
            break;
        }
        case AttackId::AdvGan: {
            GanTrainResult gan = train_advgan(frozen, train, cfg, GanMode::PerImage);
            parallel_for(train.size(), cfg.jobs, [&](size_t i) {
                adv[i] = advgan_generate(gan.generator, train.samples[i].image, frozen, cfg.delta)
                             .adversarial;
            });
            break;
        }
        case AttackId::AdvGanUni: {
            GanTrainResult gan = train_advgan(frozen, train, cfg, GanMode::Universal);
            parallel_for(train.size(), cfg.jobs, [&](size_t i) {
                adv[i] = clamp01(add(train.samples[i].image, gan.universal_perturbation));
            });
            break;
        }
    }
    return adv;
}

void check_unit_image(const Image& image) {
    if (!in_unit_range(image)) {
        throw std::invalid_argument("squeezer input pixels must lie in [0,1]");
    }
}

}  // namespace

DefendedModel adversarial_train(const RegressionModel& original, const Dataset& train,
                                AttackId attack, double alpha, const TrainConfig& cfg,
                                const AttackConfig& attack_cfg) {
    if (train.empty()) throw std::invalid_argument("adversarial training needs a nonempty dataset");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");

    const std::vector<Image> adversarial = precompute_adversarial(original, train, attack,
                                                                  attack_cfg);
    if (adversarial.size() != train.size()) {
        throw std::runtime_error("attack produced no adversarial examples");
    }

    DefendedModel out;
    out.model = build_model(original.arch_id(), original.input_size(), cfg.seed);
    const SampleLoss loss = [&](const RegressionModel& replica, size_t i) {
        const Sample& s = train.samples[i];
        Tensor target = Tensor::scalar(s.angle);
        Tensor clean = mse_loss(replica.forward(image_to_tensor(s.image)), target);
        Tensor adv = mse_loss(replica.forward(image_to_tensor(adversarial[i])), target);
        return add(scale(clean, alpha), scale(adv, 1.0 - alpha));
    };
    train_loop(out.model, train.size(), loss, cfg);
    out.clean_rmse = eval_rmse(out.model, train, cfg.jobs);
    return out;
}

DefendedModel distill_train(const RegressionModel& teacher, const Dataset& train,
                            const DistillConfig& cfg) {
    if (train.empty()) throw std::invalid_argument("distillation needs a nonempty dataset");
    if (cfg.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");

    const RegressionModel frozen = teacher.clone_frozen();
    const int feat_dim = frozen.feature_dim();
    std::vector<double> teacher_pred(train.size());
    std::vector<std::vector<double>> teacher_tap(train.size());
    parallel_for(train.size(), cfg.jobs, [&](size_t i) {
        auto [pred, tap] = frozen.forward_with_tap(image_to_tensor(train.samples[i].image));
        teacher_pred[i] = pred.item();
        teacher_tap[i] = tap.values();
    });

    DefendedModel out;
    out.model = build_model(teacher.arch_id(), teacher.input_size(), cfg.seed);
    const double lambda = cfg.lambda;
    const SampleLoss loss = [&, lambda, feat_dim](const RegressionModel& replica, size_t i) {
        auto [pred, tap] = replica.forward_with_tap(image_to_tensor(train.samples[i].image));
        Tensor z_teacher = Tensor(Shape{1, feat_dim}, teacher_tap[i]);
        Tensor feature_term = l2_norm(sub(tap, z_teacher));
        Tensor output_term = l2_norm(sub(pred, Tensor::scalar(teacher_pred[i])));
        return add(scale(feature_term, lambda), output_term);
    };
    TrainConfig tcfg;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = cfg.batch_size;
    tcfg.optimizer = OptimizerKind::Adam;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.seed = cfg.seed;
    tcfg.jobs = cfg.jobs;
    train_loop(out.model, train.size(), loss, tcfg);
    out.clean_rmse = eval_rmse(out.model, train, cfg.jobs);
    return out;
}

Image reduce_bit_depth(const Image& image, int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("bit depth must be in [1,8]");
    check_unit_image(image);
    const double levels = static_cast<double>((1 << bits) - 1);
    Image out = image;
    for (double& v : out.data) v = std::round(v * levels) / levels;
    return out;
}

Image median_smooth(const Image& image, int k) {
    if (k < 2) throw std::invalid_argument("median window must be at least 2");
    if (image.height < k || image.width < k) {
        throw std::invalid_argument("image smaller than median window");
    }
    check_unit_image(image);
    const int h = image.height, w = image.width;
    auto mirror = [](int idx, int size) { return idx < size ? idx : 2 * size - 2 - idx; };
    Image out(h, w);
    std::vector<double> window(static_cast<size_t>(k) * k);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                size_t n = 0;
                for (int dy = 0; dy < k; ++dy) {
                    const int yy = mirror(y + dy, h);
                    for (int dx = 0; dx < k; ++dx) {
                        window[n++] = image.at(c, yy, mirror(x + dx, w));
                    }
                }
                const size_t mid = n / 2;
                std::nth_element(window.begin(), window.begin() + mid, window.begin() + n);
                double med = window[mid];
                if (n % 2 == 0) {
                    std::nth_element(window.begin(), window.begin() + mid - 1,
                                     window.begin() + mid);
                    med = 0.5 * (med + window[mid - 1]);
                }
                out.at(c, y, x) = med;
            }
        }
    }
    return out;
}

DetectionResult squeeze_detect(const DifferentiableModel& model, const Image& image,
                               double threshold) {
    if (!(threshold > 0.0)) throw std::invalid_argument("detection threshold must be positive");
    DetectionResult r;
    r.threshold = threshold;
    const double base = predict(model, image);
    r.score_bitdepth = std::fabs(base - predict(model, reduce_bit_depth(image, 4)));
    r.score_median = std::fabs(base - predict(model, median_smooth(image, 2)));
    r.flagged = std::max(r.score_bitdepth, r.score_median) > threshold;
    return r;
}

ResourceProfile profile_inference(const DifferentiableModel& model,
                                  const std::vector<Image>& images, const AttackRuntime* attack) {
    if (images.empty()) throw std::invalid_argument("profiling needs a nonempty image list");
    if (attack != nullptr) {
        if ((attack->id == AttackId::OptUni || attack->id == AttackId::AdvGanUni) &&
            attack->universal == nullptr) {
            throw std::invalid_argument("universal attack profile needs its perturbation");
        }
        if (attack->id == AttackId::AdvGan && attack->generator == nullptr) {
            throw std::invalid_argument("advgan profile needs its generator");
        }
    }

    metrics::reset_pass_counts();
    metrics::reset_peak_tensor_bytes();
    const auto t0 = std::chrono::steady_clock::now();
    for (const Image& image : images) {
        if (attack == nullptr) {
            predict(model, image);
            continue;
        }
        switch (attack->id) {
            case AttackId::ItFgsm:
                it_fgsm(model, image, attack->cfg);
                break;
            case AttackId::Opt:
                opt_attack(model, image, attack->cfg);
                break;
            case AttackId::OptUni:
            case AttackId::AdvGanUni:
                predict(model, clamp01(add(image, *attack->universal)));
                break;
            case AttackId::AdvGan: {
                const Image pert = attack->generator->generate(image);
                predict(model, clamp01(add(image, pert)));
                break;
            }
        }
    }
    const auto t1 = std::chrono::steady_clock::now();

    ResourceProfile p;
    p.n_images = static_cast<int>(images.size());
    p.mean_time_per_image =
        std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(images.size());
    p.peak_scratch_bytes = metrics::peak_tensor_bytes();
    p.backward_passes_total = metrics::backward_passes() + metrics::generator_passes();
    return p;
}

bool anomaly_flag(const ResourceProfile& baseline, const ResourceProfile& observed,
                  double time_ratio_threshold, double compute_ratio_threshold) {
    if (!(time_ratio_threshold > 0.0) || !(compute_ratio_threshold > 0.0)) {
        throw std::invalid_argument("anomaly ratio thresholds must be positive");
    }
    if (!(baseline.mean_time_per_image > 0.0) || baseline.peak_scratch_bytes == 0) {
        throw std::invalid_argument("anomaly baseline fields must be positive");
    }
    const double time_ratio = observed.mean_time_per_image / baseline.mean_time_per_image;
    const double compute_ratio = static_cast<double>(observed.peak_scratch_bytes) /
                                 static_cast<double>(baseline.peak_scratch_bytes);
    return time_ratio > time_ratio_threshold || compute_ratio > compute_ratio_threshold;
}

}  // namespace advdrive
