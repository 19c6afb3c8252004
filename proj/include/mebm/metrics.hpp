#pragma once

// Classification metrics over the 39 phoneme classes.
//
// Macro averages run over classes present in the truth (f1 also counts
// classes that only appear among predictions). A class with no true
// positives has F1 = 0. Top-k ties are broken by ascending class id.

#include "mebm/data.hpp"

#include <nlohmann/json.hpp>

#include <iomanip>
#include <numeric>
#include <sstream>

namespace mebm {

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

namespace detail {

inline void check_ids(std::span<const PhonemeId> ids, const char* what) {
    for (auto id : ids) {
        if (id >= kNumClasses) {
            throw std::out_of_range(std::string(what) + ": class id " + std::to_string(id) + " out of range");
        }
    }
}

}  // namespace detail

/// Entry (i, j) counts samples with truth i predicted as j.
inline ConfusionMatrix confusion_matrix(std::span<const PhonemeId> truth, std::span<const PhonemeId> pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
    detail::check_ids(truth, "confusion_matrix");
    detail::check_ids(pred, "confusion_matrix");
    ConfusionMatrix m{};
    for (std::size_t i = 0; i < truth.size(); ++i) ++m[truth[i]][pred[i]];
    return m;
}

/// Per-class F1 from a confusion matrix; NaN marks classes absent from
/// both truth and predictions.
inline std::array<double, kNumClasses> per_class_f1(const ConfusionMatrix& m) {
    std::array<double, kNumClasses> f1{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::size_t true_count = 0, pred_count = 0;
        for (std::size_t j = 0; j < kNumClasses; ++j) {
            true_count += m[c][j];
            pred_count += m[j][c];
        }
        if (true_count == 0 && pred_count == 0) {
            f1[c] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double tp = double(m[c][c]);
        if (tp == 0.0) {
            f1[c] = 0.0;
            continue;
        }
        const double p = tp / double(pred_count);
        const double r = tp / double(true_count);
        f1[c] = 2.0 * p * r / (p + r);
    }
    return f1;
}

inline double macro_mean(std::span<const double> per_class) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : per_class) {
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

inline double f1_macro(std::span<const PhonemeId> truth, std::span<const PhonemeId> pred) {
    if (truth.empty()) throw std::invalid_argument("f1_macro: empty input");
    const auto f1 = per_class_f1(confusion_matrix(truth, pred));
    return macro_mean(f1);
}

/// Class ids of the k largest entries of `row`, larger first, ties by ascending id.
inline std::vector<PhonemeId> top_k_classes(std::span<const double> row, std::size_t k) {
    std::vector<PhonemeId> order(row.size());
    std::iota(order.begin(), order.end(), PhonemeId{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](PhonemeId a, PhonemeId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    order.resize(k);
    return order;
}

/// `probs` is row-major (N x 39).
inline std::array<double, kNumClasses> per_class_topk(std::span<const PhonemeId> truth, std::span<const double> probs,
                                                      std::size_t k) {
    if (k < 1 || k > kNumClasses) throw std::invalid_argument("topk_acc_macro: k must be in [1, 39]");
    if (probs.size() != truth.size() * kNumClasses) throw std::invalid_argument("topk_acc_macro: probs must be N x 39");
    detail::check_ids(truth, "topk_acc_macro");
    std::array<std::size_t, kNumClasses> hits{}, counts{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::span<const double> row = probs.subspan(i * kNumClasses, kNumClasses);
        // Rank of the true class under the (prob desc, id asc) order.
        const auto y = truth[i];
        std::size_t rank = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++rank;
        }
        ++counts[y];
        if (rank < k) ++hits[y];
    }
    std::array<double, kNumClasses> acc;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        acc[c] = counts[c] ? double(hits[c]) / double(counts[c]) : std::numeric_limits<double>::quiet_NaN();
    }
    return acc;
}

inline double topk_acc_macro(std::span<const PhonemeId> truth, std::span<const double> probs, std::size_t k) {
    if (truth.empty()) throw std::invalid_argument("topk_acc_macro: empty input");
    const auto acc = per_class_topk(truth, probs, k);
    return macro_mean(acc);
}

struct MetricsReport {
    ConfusionMatrix confusion{};
    double f1_macro = 0.0;
    double top1_macro = 0.0;
    double top3_macro = 0.0;
    double top5_macro = 0.0;
    std::array<double, kNumClasses> per_class_f1{};  // NaN where the class is absent
    std::size_t n_samples = 0;

    static MetricsReport compute(std::span<const PhonemeId> truth, std::span<const double> probs) {
        if (truth.empty()) throw std::invalid_argument("metrics: empty input");
        std::vector<PhonemeId> pred(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            pred[i] = top_k_classes(probs.subspan(i * kNumClasses, kNumClasses), 1)[0];
        }
        MetricsReport r;
        r.confusion = confusion_matrix(truth, pred);
        r.per_class_f1 = mebm::per_class_f1(r.confusion);
        r.f1_macro = macro_mean(r.per_class_f1);
        r.top1_macro = topk_acc_macro(truth, probs, 1);
        r.top3_macro = topk_acc_macro(truth, probs, 3);
        r.top5_macro = topk_acc_macro(truth, probs, 5);
        r.n_samples = truth.size();
        return r;
    }

    nlohmann::json to_json(const PhonemeVocab& vocab) const {
        nlohmann::json j;
        j["n_samples"] = n_samples;
        j["f1_macro"] = f1_macro;
        j["top1_acc_macro"] = top1_macro;
        j["top3_acc_macro"] = top3_macro;
        j["top5_acc_macro"] = top5_macro;
        nlohmann::json per = nlohmann::json::object();
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            per[vocab.label(static_cast<PhonemeId>(c))] =
                std::isnan(per_class_f1[c]) ? nlohmann::json(nullptr) : nlohmann::json(per_class_f1[c]);
        }
        j["per_class_f1"] = per;
        j["labels"] = vocab.labels();
        j["confusion"] = confusion;
        return j;
    }

    std::string to_text(const PhonemeVocab& vocab) const {
        std::ostringstream out;
        out << std::fixed << std::setprecision(2);
        out << "samples        " << n_samples << "\n";
        out << "F1 macro       " << 100.0 * f1_macro << "%\n";
        out << "Top-1 macro    " << 100.0 * top1_macro << "%\n";
        out << "Top-3 macro    " << 100.0 * top3_macro << "%\n";
        out << "Top-5 macro    " << 100.0 * top5_macro << "%\n";
        out << "\nclass   support  F1\n";
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const std::size_t support = std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
            out << std::left << std::setw(8) << vocab.label(static_cast<PhonemeId>(c)) << std::right << std::setw(7)
                << support << "  ";
            if (std::isnan(per_class_f1[c])) {
                out << "-";
            } else {
                out << 100.0 * per_class_f1[c];
            }
            out << "\n";
        }
        return out.str();
    }
};

}  // namespace mebm
