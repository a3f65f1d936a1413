#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advdrive/attacks.hpp"
#include "advdrive/dataset.hpp"
#include "advdrive/defenses.hpp"
#include "advdrive/model.hpp"

namespace advdrive {

// A runnable attack against one model: the config plus any precomputed
// artifacts (universal grid, trained generator).
struct AttackInstance {
    AttackId id = AttackId::ItFgsm;
    AttackConfig cfg;
    const Image* universal = nullptr;
    const Generator* generator = nullptr;
};

AdversarialExample run_attack(const DifferentiableModel& model, const AttackInstance& instance,
                              const Image& image);

struct ExampleStats {
    double deviation = 0.0;
    bool success = false;
    int iterations = 0;
};

struct RateResult {
    double rate = 0.0;
    std::vector<ExampleStats> stats;  // dataset order
};

// Fraction of attacked images whose deviation reaches cfg.delta.
RateResult success_rate(const DifferentiableModel& model, const AttackInstance& instance,
                        const Dataset& data, int jobs = 1);

// Full examples (with images) for detection studies and rendering.
std::vector<AdversarialExample> craft_examples(const DifferentiableModel& model,
                                               const AttackInstance& instance,
                                               const Dataset& data, int jobs = 1);

// Re-scores a fixed set of crafted examples at each threshold; rates are
// monotone non-increasing. deltas must be ascending and positive.
std::vector<std::pair<double, double>> threshold_sweep(const std::vector<ExampleStats>& stats,
                                                       const std::vector<double>& deltas);
std::vector<std::pair<double, double>> threshold_sweep(const DifferentiableModel& model,
                                                       const AttackInstance& instance,
                                                       const Dataset& data,
                                                       const std::vector<double>& deltas,
                                                       int jobs = 1);

struct TransferRow {
    std::string attack;
    std::string src_model;
    std::string tgt_model;
    double rate = 0.0;
    bool applicable = false;  // false on the diagonal (src == tgt)
};

// Artifacts crafted on one source model for the black-box protocol.
struct CraftedArtifacts {
    std::string model_id;
    Image opt_uni;
    Generator advgan;
    Image advgan_uni;
};

// Applies every source model's artifacts to every target model.
// Diagonal cells are computed (they equal the artifact's white-box rate)
// but marked not applicable.
std::vector<TransferRow> transfer_matrix(const std::vector<const RegressionModel*>& models,
                                         const std::vector<std::string>& model_ids,
                                         const std::vector<CraftedArtifacts>& artifacts,
                                         const Dataset& data, double delta, int jobs = 1);

struct DetectionRow {
    double threshold = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
    std::string attack;
    std::string model_id;
};

// Feature-squeezing operating curve: recall over the adversarial images,
// false positive rate over the clean set. Both monotone non-increasing
// in the threshold.
std::vector<DetectionRow> detection_curve(const DifferentiableModel& model, const Dataset& clean,
                                          const std::vector<Image>& adversarial,
                                          const std::vector<double>& thresholds,
                                          const std::string& attack, const std::string& model_id,
                                          int jobs = 1);

// Side-by-side PNG: original | adversarial | amplified perturbation
// (0.5 + amplify * perturbation, clamped), annotated with both
// predictions. Byte-deterministic for identical inputs.
void render_adversarial(const AdversarialExample& example, double amplify,
                        const std::string& out_path);

struct ModelDesc {
    std::string model_id;
    std::string arch;
    int input_size = 0;
    long long param_count = 0;
    double rmse = 0.0;
    double zero_rmse = 0.0;
};

struct WhiteBoxRow {
    std::string model_id;
    std::string attack;
    double rate = 0.0;
    int n = 0;
    double mean_deviation = 0.0;
    std::vector<std::pair<double, double>> sweep;  // optional threshold sweep
};

struct DefenseRow {
    std::string kind;  // adv_train | distill | feature_squeezing | anomaly
    std::string model_id;
    std::string attack;
    std::vector<std::pair<std::string, double>> values;  // ordered metrics
};

struct ProfileRow {
    std::string model_id;
    std::string attack;  // "none" for the clean baseline
    double mean_time_per_image = 0.0;
    size_t peak_scratch_bytes = 0;
    double backward_passes_per_image = 0.0;
    int n_images = 0;
    bool include_time = false;  // wall clock is not reproducible; opt-in
};

struct EvaluationReport {
    std::string run_id;
    uint64_t seed = 0;
    std::string version;
    std::vector<ModelDesc> models;
    std::vector<WhiteBoxRow> white_box;
    std::vector<TransferRow> black_box;
    std::vector<DefenseRow> defenses;
    std::vector<DetectionRow> detection;
    std::vector<ProfileRow> profiles;
};

enum class ReportFormat { Json, Csv };

// json: one file at out_path with stable key order and floats at six
// significant digits. csv: out_path is a directory; one file per table.
void emit_report(const EvaluationReport& report, ReportFormat format,
                 const std::string& out_path);

std::string derive_run_id(const std::string& text);

}  // namespace advdrive
