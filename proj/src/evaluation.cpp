#include "advdrive/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "advdrive/parallel.hpp"
#include "advdrive/png_io.hpp"
#include "advdrive/rng.hpp"

namespace advdrive {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Rounds to six significant digits so report serialization is stable.
double sig6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::strtod(buf, nullptr);
}

std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

AdversarialExample run_attack(const DifferentiableModel& model, const AttackInstance& instance,
                              const Image& image) {
    switch (instance.id) {
        case AttackId::ItFgsm:
            return it_fgsm(model, image, instance.cfg);
        case AttackId::Opt:
            return opt_attack(model, image, instance.cfg);
        case AttackId::OptUni:
        case AttackId::AdvGanUni:
            if (instance.universal == nullptr) {
                throw std::invalid_argument("universal attack instance has no perturbation");
            }
            return apply_perturbation(model, image, *instance.universal, instance.cfg.delta,
                                      instance.id);
        case AttackId::AdvGan:
            if (instance.generator == nullptr) {
                throw std::invalid_argument("advgan attack instance has no generator");
            }
            return advgan_generate(*instance.generator, image, model, instance.cfg.delta);
    }
    throw std::invalid_argument("unknown attack");
}

RateResult success_rate(const DifferentiableModel& model, const AttackInstance& instance,
                        const Dataset& data, int jobs) {
    if (data.empty()) throw std::invalid_argument("success_rate needs a nonempty dataset");
    RateResult result;
    result.stats.resize(data.size());
    parallel_for(data.size(), jobs, [&](size_t i) {
        const AdversarialExample ex = run_attack(model, instance, data.samples[i].image);
        result.stats[i] = {ex.deviation, ex.success, ex.iterations_used};
    });
    size_t n = 0;
    for (const ExampleStats& s : result.stats) n += s.success ? 1 : 0;
    result.rate = static_cast<double>(n) / static_cast<double>(data.size());
    return result;
}

std::vector<AdversarialExample> craft_examples(const DifferentiableModel& model,
                                               const AttackInstance& instance,
                                               const Dataset& data, int jobs) {
    if (data.empty()) throw std::invalid_argument("craft_examples needs a nonempty dataset");
    std::vector<AdversarialExample> out(data.size());
    parallel_for(data.size(), jobs, [&](size_t i) {
        out[i] = run_attack(model, instance, data.samples[i].image);
    });
    return out;
}

std::vector<std::pair<double, double>> threshold_sweep(const std::vector<ExampleStats>& stats,
                                                       const std::vector<double>& deltas) {
    if (deltas.empty()) throw std::invalid_argument("threshold sweep needs deltas");
    for (size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0)) throw std::invalid_argument("sweep deltas must be positive");
        if (i > 0 && deltas[i] <= deltas[i - 1]) {
            throw std::invalid_argument("sweep deltas must be strictly ascending");
        }
    }
    if (stats.empty()) throw std::invalid_argument("threshold sweep needs crafted examples");
    std::vector<std::pair<double, double>> out;
    out.reserve(deltas.size());
    for (double d : deltas) {
        size_t n = 0;
        for (const ExampleStats& s : stats) n += s.deviation >= d ? 1 : 0;
        out.emplace_back(d, static_cast<double>(n) / static_cast<double>(stats.size()));
    }
    return out;
}

std::vector<std::pair<double, double>> threshold_sweep(const DifferentiableModel& model,
                                                       const AttackInstance& instance,
                                                       const Dataset& data,
                                                       const std::vector<double>& deltas,
                                                       int jobs) {
    return threshold_sweep(success_rate(model, instance, data, jobs).stats, deltas);
}

std::vector<TransferRow> transfer_matrix(const std::vector<const RegressionModel*>& models,
                                         const std::vector<std::string>& model_ids,
                                         const std::vector<CraftedArtifacts>& artifacts,
                                         const Dataset& data, double delta, int jobs) {
    if (models.size() < 2) throw std::invalid_argument("transfer matrix needs >= 2 models");
    if (models.size() != model_ids.size() || models.size() != artifacts.size()) {
        throw std::invalid_argument("transfer matrix inputs misaligned");
    }
    std::vector<TransferRow> rows;
    for (size_t src = 0; src < models.size(); ++src) {
        for (const AttackId id : {AttackId::OptUni, AttackId::AdvGan, AttackId::AdvGanUni}) {
            AttackInstance instance;
            instance.id = id;
            instance.cfg.delta = delta;
            if (id == AttackId::OptUni) instance.universal = &artifacts[src].opt_uni;
            if (id == AttackId::AdvGanUni) instance.universal = &artifacts[src].advgan_uni;
            if (id == AttackId::AdvGan) instance.generator = &artifacts[src].advgan;
            for (size_t tgt = 0; tgt < models.size(); ++tgt) {
                TransferRow row;
                row.attack = attack_name(id);
                row.src_model = model_ids[src];
                row.tgt_model = model_ids[tgt];
                row.applicable = src != tgt;
                row.rate = success_rate(*models[tgt], instance, data, jobs).rate;
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::vector<DetectionRow> detection_curve(const DifferentiableModel& model, const Dataset& clean,
                                          const std::vector<Image>& adversarial,
                                          const std::vector<double>& thresholds,
                                          const std::string& attack, const std::string& model_id,
                                          int jobs) {
    if (clean.empty() || adversarial.empty()) {
        throw std::invalid_argument("detection curve needs nonempty clean and adversarial sets");
    }
    // Squeeze scores do not depend on the threshold; compute them once.
    std::vector<double> adv_scores(adversarial.size());
    parallel_for(adversarial.size(), jobs, [&](size_t i) {
        const DetectionResult r = squeeze_detect(model, adversarial[i], 1.0);
        adv_scores[i] = std::max(r.score_bitdepth, r.score_median);
    });
    std::vector<double> clean_scores(clean.size());
    parallel_for(clean.size(), jobs, [&](size_t i) {
        const DetectionResult r = squeeze_detect(model, clean.samples[i].image, 1.0);
        clean_scores[i] = std::max(r.score_bitdepth, r.score_median);
    });

    std::vector<DetectionRow> rows;
    for (double t : thresholds) {
        if (!(t > 0.0)) throw std::invalid_argument("detection thresholds must be positive");
        DetectionRow row;
        row.threshold = t;
        row.attack = attack;
        row.model_id = model_id;
        size_t flagged = 0;
        for (double s : adv_scores) flagged += s > t ? 1 : 0;
        row.recall = static_cast<double>(flagged) / static_cast<double>(adv_scores.size());
        flagged = 0;
        for (double s : clean_scores) flagged += s > t ? 1 : 0;
        row.fpr = static_cast<double>(flagged) / static_cast<double>(clean_scores.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

// 5x7 bitmap glyphs for the annotation strip.
struct Glyph {
    char ch;
    const char* rows[7];
};

const Glyph kGlyphs[] = {
    {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
    {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
    {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
    {'3', {"11110", "00001", "00001", "01110", "00001", "00001", "11110"}},
    {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
    {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
    {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
    {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
    {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
    {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
    {'.', {"00000", "00000", "00000", "00000", "00000", "01100", "01100"}},
    {'-', {"00000", "00000", "00000", "01110", "00000", "00000", "00000"}},
    {'+', {"00000", "00100", "00100", "11111", "00100", "00100", "00000"}},
    {' ', {"00000", "00000", "00000", "00000", "00000", "00000", "00000"}},
    {'O', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
    {'R', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
    {'I', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
    {'G', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
    {'A', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
    {'D', {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}},
    {'V', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
};

const Glyph* find_glyph(char ch) {
    for (const Glyph& g : kGlyphs) {
        if (g.ch == ch) return &g;
    }
    return nullptr;
}

void draw_text(Image& img, int x0, int y0, const std::string& text) {
    int x = x0;
    for (char ch : text) {
        const Glyph* g = find_glyph(ch);
        if (g != nullptr) {
            for (int r = 0; r < 7; ++r) {
                for (int c = 0; c < 5; ++c) {
                    if (g->rows[r][c] != '1') continue;
                    const int py = y0 + r, px = x + c;
                    if (py < 0 || py >= img.height || px < 0 || px >= img.width) continue;
                    img.at(0, py, px) = 1.0;
                    img.at(1, py, px) = 1.0;
                    img.at(2, py, px) = 1.0;
                }
            }
        }
        x += 6;
    }
}

}  // namespace

void render_adversarial(const AdversarialExample& example, double amplify,
                        const std::string& out_path) {
    if (!(amplify > 0.0)) throw std::invalid_argument("amplify must be positive");
    const Image& orig = example.original;
    const int h = orig.height, w = orig.width;
    const int strip = 10, gap = 2;
    Image canvas(h + strip, 3 * w + 2 * gap);
    for (double& v : canvas.data) v = 0.15;

    Image amplified(h, w);
    for (size_t i = 0; i < amplified.data.size(); ++i) {
        amplified.data[i] =
            std::min(1.0, std::max(0.0, 0.5 + amplify * example.perturbation.data[i]));
    }
    const Image* panels[3] = {&orig, &example.adversarial, &amplified};
    for (int p = 0; p < 3; ++p) {
        const int x0 = p * (w + gap);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    canvas.at(c, strip + y, x0 + x) = panels[p]->at(c, y, x);
                }
            }
        }
    }
    char text[96];
    std::snprintf(text, sizeof text, "ORIG %.4f  ADV %.4f", example.pred_original,
                  example.pred_adversarial);
    draw_text(canvas, 2, 1, text);

    write_png_rgb8(out_path, canvas.width, canvas.height, to_rgb8(canvas));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json report_to_json(const EvaluationReport& report) {
    json j;
    j["run_id"] = report.run_id;
    j["seed"] = report.seed;
    j["version"] = report.version;
    j["models"] = json::array();
    for (const ModelDesc& m : report.models) {
        j["models"].push_back({{"model_id", m.model_id},
                               {"arch", m.arch},
                               {"input_size", m.input_size},
                               {"param_count", m.param_count},
                               {"rmse", sig6(m.rmse)},
                               {"zero_rmse", sig6(m.zero_rmse)}});
    }
    j["white_box"] = json::array();
    for (const WhiteBoxRow& r : report.white_box) {
        json row = {{"model_id", r.model_id},
                    {"attack", r.attack},
                    {"rate", sig6(r.rate)},
                    {"n", r.n},
                    {"mean_deviation", sig6(r.mean_deviation)}};
        if (!r.sweep.empty()) {
            json sweep = json::array();
            for (auto [d, rate] : r.sweep) sweep.push_back({sig6(d), sig6(rate)});
            row["sweep"] = sweep;
        }
        j["white_box"].push_back(row);
    }
    j["black_box"] = json::array();
    for (const TransferRow& r : report.black_box) {
        j["black_box"].push_back({{"attack", r.attack},
                                  {"src_model", r.src_model},
                                  {"tgt_model", r.tgt_model},
                                  {"rate", sig6(r.rate)},
                                  {"applicable", r.applicable}});
    }
    j["defenses"] = json::array();
    for (const DefenseRow& r : report.defenses) {
        json values;
        for (const auto& [k, v] : r.values) values[k] = sig6(v);
        j["defenses"].push_back({{"kind", r.kind},
                                 {"model_id", r.model_id},
                                 {"attack", r.attack},
                                 {"values", values}});
    }
    j["detection"] = json::array();
    for (const DetectionRow& r : report.detection) {
        j["detection"].push_back({{"threshold", sig6(r.threshold)},
                                  {"recall", sig6(r.recall)},
                                  {"fpr", sig6(r.fpr)},
                                  {"attack", r.attack},
                                  {"model_id", r.model_id}});
    }
    j["profiles"] = json::array();
    for (const ProfileRow& r : report.profiles) {
        json row = {{"model_id", r.model_id},
                    {"attack", r.attack},
                    {"peak_scratch_bytes", r.peak_scratch_bytes},
                    {"backward_passes_per_image", sig6(r.backward_passes_per_image)},
                    {"n_images", r.n_images}};
        if (r.include_time) row["mean_time_per_image"] = sig6(r.mean_time_per_image);
        j["profiles"].push_back(row);
    }
    return j;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write: " + path);
    f << content;
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void emit_report(const EvaluationReport& report, ReportFormat format,
                 const std::string& out_path) {
    if (format == ReportFormat::Json) {
        write_file(out_path, report_to_json(report).dump(2) + "\n");
        return;
    }
    fs::create_directories(out_path);
    const fs::path dir(out_path);
    {
        std::string csv = "model_id,arch,input_size,param_count,rmse,zero_rmse\n";
        for (const ModelDesc& m : report.models) {
            csv += m.model_id + "," + m.arch + "," + std::to_string(m.input_size) + "," +
                   std::to_string(m.param_count) + "," + fmt6(m.rmse) + "," + fmt6(m.zero_rmse) +
                   "\n";
        }
        write_file((dir / "models.csv").string(), csv);
    }
    {
        std::string csv = "model_id,attack,rate,n,mean_deviation\n";
        for (const WhiteBoxRow& r : report.white_box) {
            csv += r.model_id + "," + r.attack + "," + fmt6(r.rate) + "," + std::to_string(r.n) +
                   "," + fmt6(r.mean_deviation) + "\n";
        }
        write_file((dir / "white_box.csv").string(), csv);
    }
    {
        std::string csv = "src_model,attack,tgt_model,rate\n";
        for (const TransferRow& r : report.black_box) {
            csv += r.src_model + "," + r.attack + "," + r.tgt_model + "," +
                   (r.applicable ? fmt6(r.rate) : std::string("-")) + "\n";
        }
        write_file((dir / "black_box.csv").string(), csv);
    }
    {
        std::string csv = "kind,model_id,attack,key,value\n";
        for (const DefenseRow& r : report.defenses) {
            for (const auto& [k, v] : r.values) {
                csv += r.kind + "," + r.model_id + "," + r.attack + "," + k + "," + fmt6(v) + "\n";
            }
        }
        write_file((dir / "defenses.csv").string(), csv);
    }
    {
        std::string csv = "threshold,recall,false_positive_rate,attack_id,model_id\n";
        for (const DetectionRow& r : report.detection) {
            csv += fmt6(r.threshold) + "," + fmt6(r.recall) + "," + fmt6(r.fpr) + "," + r.attack +
                   "," + r.model_id + "\n";
        }
        write_file((dir / "detection.csv").string(), csv);
    }
    {
        std::string csv = "model_id,attack,backward_passes_per_image,peak_scratch_bytes,n_images\n";
        for (const ProfileRow& r : report.profiles) {
            csv += r.model_id + "," + r.attack + "," + fmt6(r.backward_passes_per_image) + "," +
                   std::to_string(r.peak_scratch_bytes) + "," + std::to_string(r.n_images) + "\n";
        }
        write_file((dir / "profiles.csv").string(), csv);
    }
}

std::string derive_run_id(const std::string& text) {
    uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (char c : text) h = splitmix64(h ^ static_cast<uint8_t>(c));
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace advdrive
