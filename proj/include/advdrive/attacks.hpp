#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advdrive/dataset.hpp"
#include "advdrive/image.hpp"
#include "advdrive/model.hpp"

namespace advdrive {

enum class AttackId { ItFgsm, Opt, OptUni, AdvGan, AdvGanUni };

std::string attack_name(AttackId id);
AttackId attack_from_name(const std::string& name);

// Defaults reproduce the reference protocol: deviation threshold 0.3,
// IT-FGSM epsilon 0.01 with 5 iterations, Adam at 0.005 capped at 100
// iterations for the optimization attack, GAN learning rate 0.001 with
// objective weight alpha 1, perturbations clipped to [-0.3, 0.3].
struct AttackConfig {
    double delta = 0.3;
    double fgsm_epsilon = 0.01;
    int fgsm_iters = 5;
    double opt_lr = 0.005;
    int opt_max_iters = 100;
    double gan_lr = 0.001;
    double gan_alpha = 1.0;
    double perturb_clip = 0.3;
    int target_sign = 1;  // attack target is f(x) + target_sign * delta
    uint64_t seed = 1;
    // GAN training schedule (the method leaves it open; sized for desk runs).
    int gan_epochs = 3;
    int gan_batch = 16;
    int jobs = 1;
};

struct AdversarialExample {
    Image original;
    Image adversarial;   // == clamp(original + perturbation, 0, 1)
    Image perturbation;  // adversarial - original
    double pred_original = 0.0;
    double pred_adversarial = 0.0;
    double deviation = 0.0;  // |pred_adversarial - pred_original|
    bool success = false;    // deviation >= delta used at construction
    int iterations_used = 0;
    AttackId attack_id = AttackId::ItFgsm;
};

// |f(x+e) - f(x)| >= delta. delta must be positive.
bool is_success(double pred_original, double pred_adversarial, double delta);

// All attacks treat the model as a fixed differentiable function. Pass a
// frozen clone (parameters without gradients): attacks on distinct images
// may then run in parallel without shared mutable state.

// Iterated targeted gradient-sign steps of size fgsm_epsilon toward
// f(x) + target_sign*delta, clipping to the valid image box after each
// step. Exactly fgsm_iters iterations.
AdversarialExample it_fgsm(const DifferentiableModel& model, const Image& image,
                           const AttackConfig& cfg);

// Adam minimization of ||e||_2 + J(x+e, f(x)+target_sign*delta) with the
// perturbed image projected back into [0,1] between iterations. Stops at
// the first iterate whose deviation reaches delta, hard stop at
// opt_max_iters; returns the best iterate by deviation.
AdversarialExample opt_attack(const DifferentiableModel& model, const Image& image,
                              const AttackConfig& cfg);

struct UniversalPerturbation {
    Image perturbation;          // always within [-perturb_clip, perturb_clip]
    double crafting_fooling_rate = 0.0;
    int samples_adapted = 0;     // dataset entries that required extra optimization
};

// Single-perturbation attack: seeds the grid with opt_attack on the first
// sample, then walks the dataset once in order, adapting the grid by a
// warm-started run of the same objective on every sample it does not yet
// fool. The grid is clipped to +-perturb_clip after every adaptation.
UniversalPerturbation universal_perturbation(const DifferentiableModel& model,
                                             const Dataset& dataset, const AttackConfig& cfg);

enum class GanMode { PerImage, Universal };

// Encoder-decoder perturbation generator. The head is tanh scaled by
// perturb_clip, so outputs are structurally within [-clip, clip]. In
// universal mode the input is one fixed seeded Gaussian noise image.
class Generator {
   public:
    Generator() = default;
    Generator(Generator&&) = default;
    Generator& operator=(Generator&&) = default;
    Generator(const Generator&) = delete;
    Generator& operator=(const Generator&) = delete;

    static Generator build(int input_size, double perturb_clip, GanMode mode, uint64_t param_seed,
                           uint64_t noise_seed);

    Tensor forward(const Tensor& x) const;  // graph-building path (training)
    Image generate(const Image& x) const;   // serving path; counts a generator pass
    Image universal_output() const;         // G(noise); universal mode only

    GanMode mode() const { return mode_; }
    int input_size() const { return input_size_; }
    double clip() const { return clip_; }
    uint64_t noise_seed() const { return noise_seed_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const Tensor& noise() const { return noise_; }

    static std::vector<Shape> param_shapes(int input_size);

   private:
    GanMode mode_ = GanMode::PerImage;
    int input_size_ = 64;
    double clip_ = 0.3;
    uint64_t noise_seed_ = 0;
    std::vector<Tensor> params_;
    Tensor noise_;
};

struct GanTrainResult {
    Generator generator;
    Image universal_perturbation;  // universal mode only
    double crafting_success_rate = 0.0;
};

// Alternating 1:1 discriminator/generator Adam updates (both at gan_lr)
// against the frozen target model. The generator objective is
// J(f(x+G(.)), f(x)+delta) + alpha * L_gan with a non-saturating
// binary-cross-entropy GAN term.
GanTrainResult train_advgan(const DifferentiableModel& model, const Dataset& dataset,
                            const AttackConfig& cfg, GanMode mode);

// Serves one adversarial example from a trained generator:
// clamp(x + G(x), 0, 1) in per-image mode, clamp(x + G(n), 0, 1) in
// universal mode.
AdversarialExample advgan_generate(const Generator& generator, const Image& image,
                                   const DifferentiableModel& model, double delta);

// Applies a precomputed perturbation grid (universal attacks, black-box
// transfer): clamp(x + v, 0, 1).
AdversarialExample apply_perturbation(const DifferentiableModel& model, const Image& image,
                                      const Image& v, double delta, AttackId attack_id);

}  // namespace advdrive
