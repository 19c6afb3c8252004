// Acceptance runner: `mebm_acceptance [criterion...]`, all when none given.
// Prints one PASS/FAIL line per criterion (also appended to
// acceptance_results.txt); exit code 1 if any failed.

#include "mebm/mebm.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>

using namespace mebm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Learning-run data kept in memory: validation is built first and its
// sessions released before the larger training sessions are generated.
struct LearningData {
    std::vector<SessionRecording> train;
    std::vector<AveragedSample> validation;
};

LearningData learning_data(double snr, std::size_t events_per_class, std::uint64_t data_seed) {
    SynthSpec spec;
    spec.n_sessions = 5;
    spec.events_per_class_per_session = events_per_class;
    spec.snr = snr;
    spec.seed = data_seed;
    const auto patterns = synth_class_patterns(spec.seed, spec.channels);
    LearningData d;
    {
        std::vector<SessionRecording> val;
        for (std::size_t i = 3; i < 5; ++i) val.push_back(session_normalize(synth_session(spec, i, patterns)));
        d.validation = build_validation_set(val, 0).samples;
    }
    for (std::size_t i = 0; i < 3; ++i) d.train.push_back(session_normalize(synth_session(spec, i, patterns)));
    return d;
}

ModelConfig reduced_model() {
    ModelConfig cfg;
    cfg.d = 64;
    cfg.n_multiscale_blocks = 6;
    cfg.n_bm_blocks = 2;
    return cfg;
}

TrainConfig reduced_schedule() {
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 256;
    cfg.samples_per_epoch = 32 * 256;
    return cfg;
}

void epoch_progress(const EpochRecord& r, double s) {
    std::fprintf(stderr, "  epoch %2zu loss %.4f F1 %.4f top-3 %.4f (%.0f s)\n", r.epoch, r.train_loss, r.val_f1_macro,
                 r.val_top3, s);
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = run_gradcheck(default_gradcheck_cases());
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name, failed;
    for (const auto& r : report.rows) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
        if (!r.error.empty() || !(r.max_rel_error < 1e-4)) failed += " " + r.name;
    }
    Outcome o;
    o.passed = failed.empty() && elapsed < 300.0;
    o.detail = std::to_string(report.rows.size()) + " cases, worst " + fmt("%.2e", worst) + " (" + worst_name + "), " +
               fmt("%.1f s", elapsed);
    if (!failed.empty()) o.detail += ", failed:" + failed;
    return o;
}

Outcome shape_contract() {
    auto model = build_model<float>(ModelConfig{}, AblationFlags{}, 0);
    Rng rng(2);
    double worst = 0.0;
    bool shapes_ok = true;
    const std::size_t chunk = 50;
    for (std::size_t done = 0; done < 1000; done += chunk) {
        std::vector<float> v(chunk * kSensors * kWindowSamples);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        const auto p = model.forward(Tensor<float>::from({chunk, kSensors, kWindowSamples}, std::move(v)));
        shapes_ok &= p.shape() == Shape{chunk, kNumClasses};
        for (std::size_t i = 0; i < chunk; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < kNumClasses; ++k) s += p[i * kNumClasses + k];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return {shapes_ok && worst <= 1e-6, "1000 inputs (B x 306 x 125) -> (B x 39), max |row sum - 1| " + fmt("%.2e", worst)};
}

Outcome parameter_count() {
    const auto a = build_model<float>(ModelConfig{}, AblationFlags{}, 0).trainable_count();
    const auto b = build_model<float>(ModelConfig{}, AblationFlags{}, 7).trainable_count();
    return {a == b && a >= 3'000'000 && a <= 6'500'000,
            std::to_string(a) + " trainable parameters (seed-independent: " + (a == b ? "yes" : "no") + ")"};
}

Outcome sampling_oracle() {
    std::size_t mismatches = 0;
    Rng rng(4);
    for (int i = 1; i <= 300; ++i) {
        const double n = 0.5 * i;
        long val;
        if (n >= 100) val = 100;
        else if (n >= 50) val = long(std::nearbyint(n));
        else val = std::max(1L, long(std::nearbyint(1.5 * n)));
        mismatches += n_prime_val(n) != val;
        const auto k = n_prime_train(n, rng);
        if (n >= 100) {
            mismatches += k != 100;
        } else if (n >= 50) {
            const long c = long(std::nearbyint(n));
            mismatches += k < c - 5 || k > std::min(c + 5, 100L);
        } else {
            mismatches += k != std::max(1L, long(std::nearbyint(2 * n)));
        }
    }
    // Uniform coverage of the stochastic branch.
    double worst_z = 0.0;
    bool coverage_ok = true;
    for (double n : {55.0, 72.0, 90.0}) {
        std::map<long, int> counts;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) ++counts[n_prime_train(n, rng)];
        const long c = long(n);
        coverage_ok &= counts.size() == 11 && counts.begin()->first == c - 5 && counts.rbegin()->first == c + 5;
        const double p = 1.0 / 11.0, sigma = std::sqrt(draws * p * (1 - p));
        for (const auto& [k, m] : counts) worst_z = std::max(worst_z, std::abs(m - draws * p) / sigma);
    }
    return {mismatches == 0 && coverage_ok && worst_z < 3.0,
            "300 n values, " + std::to_string(mismatches) + " mismatches, coverage worst |z| " + fmt("%.2f", worst_z)};
}

Outcome validation_construction() {
    SynthSpec spec;
    spec.n_sessions = 2;
    spec.events_per_class_per_session = 6;
    spec.channels = 16;
    auto sessions = synth_generate(spec);
    for (auto& s : sessions) s = session_normalize(std::move(s));
    const auto a = build_validation_set(sessions, 3);
    const auto b = build_validation_set(sessions, 3);
    std::vector<int> per_class(kNumClasses, 0);
    for (const auto& s : a.samples) ++per_class[s.phoneme];
    const bool eight = std::all_of(per_class.begin(), per_class.end(), [](int n) { return n == 8; });
    bool same = a.samples.size() == b.samples.size();
    for (std::size_t i = 0; same && i < a.samples.size(); ++i) {
        same = a.samples[i].features == b.samples[i].features && a.samples[i].draws == b.samples[i].draws;
    }
    return {eight && a.samples.size() == 312 && same,
            std::to_string(a.samples.size()) + " samples, 8 per class: " + (eight ? "yes" : "no") +
                ", seed-deterministic: " + (same ? "yes" : "no")};
}

Outcome loss_weights() {
    const auto vocab = PhonemeVocab::standard();
    const std::map<std::string, double> table{{"ey", 0.05}, {"ay", 3.00}, {"uh", 10.00}, {"uw", 3.00}, {"s", 0.80},
                                              {"sh", 3.00}, {"m", 3.00},   {"ae", 3.00},  {"jh", 1.50}, {"ah", 2.00}};
    const auto w = LossWeights::defaults(vocab);
    std::size_t listed = 0, ones = 0, wrong = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto it = table.find(vocab.label(static_cast<PhonemeId>(c)));
        if (it != table.end()) {
            ++listed;
            wrong += w[c] != it->second;
        } else {
            ones += w[c] == 1.0;
            wrong += w[c] != 1.0;
        }
    }
    return {listed == 10 && ones == 29 && wrong == 0,
            std::to_string(listed) + " listed values, " + std::to_string(ones) + " ones, " + std::to_string(wrong) +
                " mismatches"};
}

Outcome metric_oracles() {
    Rng rng(7);
    double worst_f1 = 0.0, worst_topk = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = std::size_t(rng.uniform_int(1, 80));
        const std::size_t classes = std::size_t(rng.uniform_int(2, 39));
        std::vector<PhonemeId> t(n), p(n);
        for (auto& x : t) x = PhonemeId(rng.uniform_int(0, std::int64_t(classes) - 1));
        for (auto& x : p) x = PhonemeId(rng.uniform_int(0, std::int64_t(classes) - 1));
        double sum = 0.0;
        int counted = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            int tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                tp += p[i] == c && t[i] == c;
                fp += p[i] == c && t[i] != c;
                fn += p[i] != c && t[i] == c;
            }
            if (tp + fp + fn == 0) continue;
            ++counted;
            sum += 2.0 * tp / double(2 * tp + fp + fn);
        }
        worst_f1 = std::max(worst_f1, std::abs(f1_macro(t, p) - sum / counted));
    }
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = std::size_t(rng.uniform_int(1, 40));
        const std::size_t k = std::size_t(rng.uniform_int(1, 39));
        std::vector<PhonemeId> t(n);
        for (auto& x : t) x = PhonemeId(rng.uniform_int(0, 38));
        std::vector<double> probs(n * kNumClasses);
        for (auto& x : probs) x = trial % 2 ? rng.uniform() : double(rng.uniform_int(0, 2));
        std::vector<int> hits(kNumClasses, 0), counts(kNumClasses, 0);
        for (std::size_t i = 0; i < n; ++i) {
            // rank = classes strictly better, plus equal ones with a lower id
            std::size_t rank = 0;
            const double mine = probs[i * kNumClasses + t[i]];
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                const double other = probs[i * kNumClasses + c];
                rank += other > mine || (other == mine && c < t[i]);
            }
            ++counts[t[i]];
            hits[t[i]] += rank < k;
        }
        double sum = 0.0;
        int present = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (!counts[c]) continue;
            sum += double(hits[c]) / counts[c];
            ++present;
        }
        worst_topk = std::max(worst_topk, std::abs(topk_acc_macro(t, probs, k) - sum / present));
    }
    const std::vector<PhonemeId> truth{0, 0, 1, 1}, all_a{0, 0, 0, 0};
    const double hand = f1_macro(truth, all_a);
    return {worst_f1 <= 1e-12 && worst_topk <= 1e-12 && std::abs(hand - 1.0 / 3.0) <= 1e-12,
            "F1 worst diff " + fmt("%.1e", worst_f1) + ", top-k worst diff " + fmt("%.1e", worst_topk) +
                ", all-predict-A " + fmt("%.6f", hand)};
}

Outcome synthetic_learning() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = learning_data(4.0, 120, 0);
    std::fprintf(stderr, "  data ready (%.0f s), %zu validation samples\n", seconds_since(t0), data.validation.size());
    auto cfg = reduced_schedule();
    cfg.seed = 0;
    const auto r = fit<float>(data.train, data.validation, reduced_model(), cfg, LossWeights::defaults(), epoch_progress);
    const auto& last = r.history.back();
    const double elapsed = seconds_since(t0);
    return {last.val_f1_macro >= 0.90 && last.val_top3 >= 0.98,
            "final F1 " + fmt("%.4f", last.val_f1_macro) + ", top-3 " + fmt("%.4f", last.val_top3) + " (chance " +
                fmt("%.4f", 1.0 / 39.0) + "), " + fmt("%.0f s on %.0f core(s)", elapsed, double(configured_threads()))};
}

Outcome ablation_direction() {
    const auto t0 = std::chrono::steady_clock::now();
    // Lighter data and schedule than criterion 8: twelve runs on one core.
    const auto data = learning_data(1.0, 20, 1);
    auto schedule = reduced_schedule();
    schedule.epochs = 4;
    std::vector<AblationVariant> variants{ablation_variants()[0], ablation_variants()[3]};
    const auto results = run_ablation(
        data.train, data.validation, reduced_model(), schedule, LossWeights::defaults(), {0, 1, 2, 3, 4, 5},
        variants, [](const AblationVariant& v, const RunMetrics& m) {
            std::fprintf(stderr, "  %s seed %llu: F1 %.4f\n", v.name.c_str(), static_cast<unsigned long long>(m.seed),
                         m.f1_macro);
        });
    const auto full = results[0].f1(), no_bm = results[1].f1();
    const double pooled = std::sqrt(0.5 * (full.std * full.std + no_bm.std * no_bm.std));
    const double margin = full.mean - no_bm.mean;
    return {margin > pooled, "full " + format_mean_std(full) + ", w/o BM " + format_mean_std(no_bm) + ", margin " +
                                 fmt("%.2f", 100.0 * margin) + " vs pooled std " + fmt("%.2f", 100.0 * pooled) + ", " +
                                 fmt("%.0f s", seconds_since(t0))};
}

Outcome determinism() {
    const auto dir = fs::temp_directory_path() / "mebm_acceptance_determinism";
    fs::remove_all(dir);
    std::ostringstream sink;
    SynthOptions synth;
    synth.sessions = 2;
    synth.events_per_class = 8;
    synth.seed = 3;
    synth.out = dir / "data";
    if (cmd_synth(synth, sink, sink) != 0) return {false, "synth failed: " + sink.str()};
    RunConfig cfg;
    cfg.model.d = 16;
    cfg.model.n_multiscale_blocks = 2;
    cfg.model.n_bm_blocks = 1;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    cfg.train.samples_per_epoch = 48;
    cfg.train.seed = 11;
    cfg.manifest = dir / "data" / "manifest.json";
    write_file(dir / "config.json", cfg.to_json().dump(2));
    for (const char* run : {"a", "b"}) {
        TrainOptions opt{dir / "config.json", std::nullopt, std::nullopt, dir / run};
        if (cmd_train(opt, sink, sink) != 0) return {false, std::string("train failed: ") + sink.str()};
    }
    const bool csv = slurp(dir / "a/history.csv") == slurp(dir / "b/history.csv");
    const auto ckpt_a = slurp(dir / "a/checkpoint.mebm");
    const bool ckpt = !ckpt_a.empty() && ckpt_a == slurp(dir / "b/checkpoint.mebm");
    if (csv && ckpt) fs::remove_all(dir);
    return {csv && ckpt, std::string("history identical: ") + (csv ? "yes" : "no") +
                             ", checkpoint identical: " + (ckpt ? "yes" : "no") + " (" + std::to_string(ckpt_a.size()) +
                             " bytes)"};
}

Outcome format_round_trips() {
    const auto dir = fs::temp_directory_path() / "mebm_acceptance_formats";
    fs::remove_all(dir);
    fs::create_directories(dir);
    SynthSpec spec;
    spec.events_per_class_per_session = 3;
    auto rec = synth_generate(spec)[0];
    rec.session_id = "session";
    write_megb(rec, dir / "session.megb");
    write_megb(read_megb(dir / "session.megb"), dir / "again.megb");
    const auto megb = slurp(dir / "session.megb");
    const bool megb_ok = !megb.empty() && megb == slurp(dir / "again.megb");

    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_multiscale_blocks = 2;
    cfg.n_bm_blocks = 1;
    auto model = build_model<float>(cfg, AblationFlags{}, 5);
    save_checkpoint(model, dir / "model.mebm");
    auto other = build_model<float>(cfg, AblationFlags{}, 6);
    load_checkpoint(other, dir / "model.mebm");
    save_checkpoint(other, dir / "again.mebm");
    const auto ckpt = slurp(dir / "model.mebm");
    const bool ckpt_ok = !ckpt.empty() && ckpt == slurp(dir / "again.mebm");
    fs::remove_all(dir);
    return {megb_ok && ckpt_ok, "MEGB " + std::to_string(megb.size()) + " bytes " + (megb_ok ? "identical" : "differs") +
                                    ", checkpoint " + std::to_string(ckpt.size()) + " bytes " +
                                    (ckpt_ok ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<int, std::pair<const char*, Outcome (*)()>> criteria{
        {1, {"gradient correctness", gradient_correctness}},
        {2, {"shape and normalization", shape_contract}},
        {3, {"parameter count", parameter_count}},
        {4, {"sampling rule oracle", sampling_oracle}},
        {5, {"validation construction", validation_construction}},
        {6, {"loss weight table", loss_weights}},
        {7, {"metric oracles", metric_oracles}},
        {8, {"synthetic learning", synthetic_learning}},
        {9, {"ablation direction", ablation_direction}},
        {10, {"determinism", determinism}},
        {11, {"format round trips", format_round_trips}},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int n = std::atoi(argv[i]);
        if (!criteria.count(n)) {
            std::cerr << "unknown criterion " << argv[i] << "\n";
            return 2;
        }
        selected.push_back(n);
    }
    if (selected.empty()) {
        for (const auto& [n, c] : criteria) selected.push_back(n);
    }
    bool all = true;
    for (int n : selected) {
        const auto& [name, run] = criteria.at(n);
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all &= o.passed;
        std::ostringstream line;
        line << "criterion " << n << " (" << name << "): " << (o.passed ? "PASS" : "FAIL") << ": " << o.detail;
        std::cout << line.str() << std::endl;
        std::ofstream("acceptance_results.txt", std::ios::app) << line.str() << "\n";
    }
    return all ? 0 : 1;
}
