#pragma once

#include <cstdint>
#include <vector>

#include "advdrive/attacks.hpp"
#include "advdrive/dataset.hpp"
#include "advdrive/image.hpp"
#include "advdrive/model.hpp"

namespace advdrive {

struct DefendedModel {
    RegressionModel model;
    double clean_rmse = 0.0;  // on the training dataset
};

// Retrains the architecture from scratch on
//   alpha * J(x, y) + (1 - alpha) * J(x', y)
// where the adversarial twins x' are precomputed once by running the
// given attack against `original` over the whole training set.
DefendedModel adversarial_train(const RegressionModel& original, const Dataset& train,
                                AttackId attack, double alpha, const TrainConfig& cfg,
                                const AttackConfig& attack_cfg);

struct DistillConfig {
    double lambda = 0.1;  // feature regularizer weight; swept over
                          // {0.01, 0.05, 0.1, 0.5, 1, 5, 10} in the protocol
    int epochs = 8;
    double learning_rate = 1e-3;
    uint64_t seed = 1;
    int batch_size = 32;
    int jobs = 1;
};

// Trains a student of the teacher's architecture on
//   sum_i (lambda * ||z_i - z'_i|| + ||f(x_i) - g(x_i)||) / n
// with unsquared Euclidean norms; z is the teacher's feature-tap
// activation vector and z' the student's on the same input.
DefendedModel distill_train(const RegressionModel& teacher, const Dataset& train,
                            const DistillConfig& cfg);

// Color-depth squeezer: per channel x -> round(x*(2^bits-1))/(2^bits-1),
// round half away from zero. bits in [1, 8]. Idempotent.
Image reduce_bit_depth(const Image& image, int bits);

// k x k moving median per channel, window anchored top-left, mirrored
// (no edge duplication) on the right/bottom so output size equals input.
// Even-count median is the mean of the two middle sorted values.
Image median_smooth(const Image& image, int k);

struct DetectionResult {
    double score_bitdepth = 0.0;
    double score_median = 0.0;
    double threshold = 0.0;
    bool flagged = false;  // max(score_bitdepth, score_median) > threshold
};

// Feature-squeezing detector: compares the prediction on the input with
// predictions on its 4-bit-depth and 2x2-median squeezed versions.
DetectionResult squeeze_detect(const DifferentiableModel& model, const Image& image,
                               double threshold);

struct ResourceProfile {
    double mean_time_per_image = 0.0;      // seconds, wall clock
    size_t peak_scratch_bytes = 0;         // tensor-allocation high water
    long long backward_passes_total = 0;   // backward sweeps + generator passes
    int n_images = 0;

    double backward_passes_per_image() const {
        return n_images == 0 ? 0.0 : static_cast<double>(backward_passes_total) / n_images;
    }
};

// What the profiled loop runs per image for each attack. Universal
// attacks serve a precomputed grid; AdvGAN serves one generator pass.
struct AttackRuntime {
    AttackId id = AttackId::ItFgsm;
    AttackConfig cfg;
    const Image* universal = nullptr;    // OptUni / AdvGanUni
    const Generator* generator = nullptr;  // AdvGan
};

// Times the serving pipeline (prediction plus per-image attack work when
// given) over all images. Must run exclusively; counters are process
// global.
ResourceProfile profile_inference(const DifferentiableModel& model,
                                  const std::vector<Image>& images,
                                  const AttackRuntime* attack = nullptr);

// True iff observed/baseline exceeds either ratio threshold (prediction
// time, or the allocation high-water compute proxy).
bool anomaly_flag(const ResourceProfile& baseline, const ResourceProfile& observed,
                  double time_ratio_threshold, double compute_ratio_threshold);

}  // namespace advdrive
