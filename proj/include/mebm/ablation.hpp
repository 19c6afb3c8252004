#pragma once

// The five model variants compared across seeds, and their summary table.

#include "mebm/training.hpp"

#include <cstdio>

namespace mebm {

struct AblationVariant {
    std::string name;
    AblationFlags flags;
};

inline std::vector<AblationVariant> ablation_variants() {
    std::vector<AblationVariant> v(5);
    v[0].name = "MEBM-Phoneme (full)";
    v[1].name = "w/o Weighted Loss";
    v[1].flags.use_weighted_loss = false;
    v[2].name = "w/o Multi-Scale Conv";
    v[2].flags.use_multiscale = false;
    v[3].name = "w/o BM Encoder";
    v[3].flags.use_bm_encoder = false;
    v[4].name = "w/o Conv Attention";
    v[4].flags.use_conv_attention = false;
    return v;
}

struct RunMetrics {
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    double f1_macro = 0.0;
    double top3 = 0.0;
    double top5 = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1); 0 for one run
};

inline MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean_std: no values");
    MeanStd r;
    for (double x : xs) r.mean += x;
    r.mean /= double(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / double(xs.size() - 1));
    }
    return r;
}

/// Percent with two decimals: "60.95±0.90".
inline std::string format_mean_std(const MeanStd& v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * v.mean, 100.0 * v.std);
    return buf;
}

struct VariantResult {
    AblationVariant variant;
    std::vector<RunMetrics> runs;

    MeanStd f1() const { return summarize(&RunMetrics::f1_macro); }
    MeanStd top3() const { return summarize(&RunMetrics::top3); }
    MeanStd top5() const { return summarize(&RunMetrics::top5); }

private:
    MeanStd summarize(double RunMetrics::*field) const {
        std::vector<double> xs;
        for (const auto& r : runs) xs.push_back(r.*field);
        return mean_std(xs);
    }
};

/// Rows of variants, columns F1 / Top-3 / Top-5 macro as mean±std percent.
inline std::string ablation_table(const std::vector<VariantResult>& results) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %-16s %-22s %-22s\n", "Model", "F1 macro (%)", "Top-3 Acc macro (%)",
                  "Top-5 Acc macro (%)");
    out += line;
    for (const auto& r : results) {
        // The ± sign is two bytes in UTF-8; pad by hand to keep columns aligned.
        auto cell = [](const MeanStd& v, std::size_t width) {
            std::string s = format_mean_std(v);
            const std::size_t shown = s.size() - 1;
            if (shown < width) s.append(width - shown, ' ');
            return s;
        };
        std::snprintf(line, sizeof line, "%-24s ", r.variant.name.c_str());
        out += line;
        out += cell(r.f1(), 16) + " " + cell(r.top3(), 22) + " " + cell(r.top5(), 22);
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += "\n";
    }
    return out;
}

inline nlohmann::json ablation_json(const std::vector<VariantResult>& results) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& m : r.runs) {
            runs.push_back({{"seed", m.seed}, {"best_epoch", m.best_epoch}, {"f1_macro", m.f1_macro},
                            {"top3_acc_macro", m.top3}, {"top5_acc_macro", m.top5}});
        }
        j.push_back({{"variant", r.variant.name},
                     {"f1_macro", {{"mean", r.f1().mean}, {"std", r.f1().std}}},
                     {"top3_acc_macro", {{"mean", r.top3().mean}, {"std", r.top3().std}}},
                     {"top5_acc_macro", {{"mean", r.top5().mean}, {"std", r.top5().std}}},
                     {"runs", runs}});
    }
    return j;
}

using AblationProgress = std::function<void(const AblationVariant&, const RunMetrics&)>;

/// Trains every variant for every seed on the same data and validation set.
/// The base config's flags are replaced by each variant's.
inline std::vector<VariantResult> run_ablation(const std::vector<SessionRecording>& train_sessions,
                                               const std::vector<AveragedSample>& validation,
                                               const ModelConfig& model_cfg, const TrainConfig& base,
                                               const LossWeights& weights, const std::vector<std::uint64_t>& seeds,
                                               const std::vector<AblationVariant>& variants = ablation_variants(),
                                               const AblationProgress& progress = {}) {
    std::vector<VariantResult> results;
    for (const auto& variant : variants) {
        VariantResult vr{variant, {}};
        for (auto seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.flags = variant.flags;
            const auto fitted = fit<float>(train_sessions, validation, model_cfg, cfg, weights);
            RunMetrics m{seed, fitted.best_epoch, fitted.best_report.f1_macro, fitted.best_report.top3_macro,
                         fitted.best_report.top5_macro};
            vr.runs.push_back(m);
            if (progress) progress(variant, m);
        }
        results.push_back(std::move(vr));
    }
    return results;
}

}  // namespace mebm
