#pragma once

// Command implementations behind the `mebm` executable. Each returns the
// process exit code: 0 success, 1 runtime failure, 2 invalid input.

#include "mebm/ablation.hpp"
#include "mebm/checkpoint.hpp"
#include "mebm/config.hpp"
#include "mebm/gradcheck_suite.hpp"
#include "mebm/synth.hpp"

#include <ctime>
#include <iostream>

namespace mebm {

/// Failure carrying an exit code; other exceptions map to code 1.
class CliError : public std::runtime_error {
public:
    CliError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
    int code() const { return code_; }

private:
    int code_;
};

namespace detail {

/// Messages go to `out`; the log file gets the same lines with timestamps.
class RunLog {
public:
    RunLog(std::ostream& out, const std::filesystem::path& file) : out_(out), file_(file, std::ios::app) {}

    void line(const std::string& msg) {
        out_ << msg << "\n";
        if (file_) {
            const std::time_t now = std::time(nullptr);
            char stamp[32];
            std::strftime(stamp, sizeof stamp, "%Y-%m-%d %H:%M:%S", std::localtime(&now));
            file_ << "[" << stamp << "] " << msg << "\n";
            file_.flush();
        }
    }

private:
    std::ostream& out_;
    std::ofstream file_;
};

inline double parse_snr(const std::string& text) {
    if (text == "inf" || text == "infinity") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || !(v >= 0.0)) throw CliError(2, "invalid --snr \"" + text + "\"");
    return v;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const CliError& e) {
        err << "error: " << e.what() << "\n";
        return e.code();
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

inline std::string epoch_line(const EpochRecord& r, double seconds) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.4f  val F1 %.2f%%  top-3 %.2f%%  top-5 %.2f%%  (%.1f s)",
                  r.epoch, r.train_loss, 100.0 * r.val_f1_macro, 100.0 * r.val_top3, 100.0 * r.val_top5, seconds);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    std::size_t sessions = 3;
    std::size_t events_per_class = 10;
    std::string snr = "4";
    std::uint64_t seed = 0;
    std::filesystem::path out = "data";
    std::size_t validation_sessions = 2;
};

/// Writes `sessions` training and two validation recordings, the
/// vocabulary, and manifest.json into `out`.
inline int cmd_synth(const SynthOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        SynthSpec spec;
        spec.n_sessions = opt.sessions + opt.validation_sessions;
        spec.events_per_class_per_session = opt.events_per_class;
        spec.snr = detail::parse_snr(opt.snr);
        spec.seed = opt.seed;
        if (opt.sessions == 0) throw CliError(2, "--sessions must be at least 1");
        spec.validate();
        std::error_code ec;
        std::filesystem::create_directories(opt.out, ec);
        if (ec) throw CliError(1, "cannot create " + opt.out.string() + ": " + ec.message());

        const auto vocab = PhonemeVocab::standard();
        vocab.save(opt.out / "vocab.txt");
        DatasetManifest manifest;
        manifest.vocab_path = "vocab.txt";
        const auto patterns = synth_class_patterns(spec.seed, spec.channels);
        for (std::size_t i = 0; i < spec.n_sessions; ++i) {
            const bool train = i < opt.sessions;
            char name[64];
            std::snprintf(name, sizeof name, "%s_%02zu.megb", train ? "train" : "valid",
                          train ? i : i - opt.sessions);
            auto rec = synth_session(spec, i, patterns);
            rec.session_id = std::filesystem::path(name).stem().string();
            write_megb(rec, opt.out / name);
            manifest.sessions.push_back({name, train ? SessionRole::train : SessionRole::validation});
            out << "wrote " << (opt.out / name).string() << " (" << rec.samples << " samples, " << rec.events.size()
                << " events)\n";
        }
        manifest.save(opt.out / "manifest.json");
        out << "wrote " << (opt.out / "manifest.json").string() << "\n";
        return 0;
    });
}

// ---------------------------------------------------------------------------
// train / ablate

struct TrainOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> out;
};

namespace detail {

inline RunConfig resolve_config(const std::filesystem::path& config_path,
                                const std::optional<std::filesystem::path>& manifest,
                                const std::optional<std::filesystem::path>& out) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (manifest) cfg.manifest = *manifest;
    if (out) cfg.output_dir = *out;
    if (cfg.manifest.empty()) throw CliError(2, "no manifest given (config \"manifest\" or --manifest)");
    if (!std::filesystem::exists(cfg.manifest)) throw CliError(2, "manifest not found: " + cfg.manifest.string());
    return cfg;
}

inline PhonemeVocab load_vocab(const DatasetManifest& manifest) {
    return manifest.vocab_path.empty() ? PhonemeVocab::standard() : PhonemeVocab::load(manifest.vocab_path);
}

inline void prepare_output(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw CliError(1, "cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace detail

/// Trains one model; writes checkpoint.mebm, history.csv, report.json,
/// report.txt, validation_discards.txt, config.json and train.log.
inline int cmd_train(const TrainOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        auto cfg = detail::resolve_config(opt.config, opt.manifest, opt.out);
        if (opt.seed) cfg.train.seed = *opt.seed;
        cfg.validate();
        const auto manifest = DatasetManifest::load(cfg.manifest);
        manifest.validate_for_training();
        const auto vocab = detail::load_vocab(manifest);
        const auto weights = cfg.weights(vocab);
        detail::prepare_output(cfg.output_dir);
        write_file(cfg.output_dir / "config.json", cfg.to_json().dump(2) + "\n");
        detail::RunLog log(out, cfg.output_dir / "train.log");
        log.line("training seed " + std::to_string(cfg.train.seed) + ", " + std::to_string(cfg.train.epochs) +
                 " epochs x " + std::to_string(cfg.train.batches_per_epoch()) + " batches of " +
                 std::to_string(cfg.train.batch_size));

        ValidationSet validation;
        const auto result = fit<float>(
            manifest, cfg.model, cfg.train, weights,
            [&](const EpochRecord& r, double seconds) { log.line(detail::epoch_line(r, seconds)); }, &validation);

        save_checkpoint(result.model, cfg.output_dir / "checkpoint.mebm");
        write_file(cfg.output_dir / "history.csv", history_csv(result.history));
        auto report = result.best_report.to_json(vocab);
        report["best_epoch"] = result.best_epoch;
        report["trainable_parameters"] = result.model.trainable_count();
        write_file(cfg.output_dir / "report.json", report.dump(2) + "\n");
        write_file(cfg.output_dir / "report.txt", result.best_report.to_text(vocab));
        write_file(cfg.output_dir / "validation_discards.txt", validation.discard_report(vocab));
        log.line("best epoch " + std::to_string(result.best_epoch) + "\n" + result.best_report.to_text(vocab));
        return 0;
    });
}

struct AblateOptions {
    std::filesystem::path config;
    std::optional<std::string> seeds;
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> out;
};

/// Trains the five variants for each seed; writes ablation.txt and
/// ablation.json and prints the table.
inline int cmd_ablate(const AblateOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        auto cfg = detail::resolve_config(opt.config, opt.manifest, opt.out);
        if (opt.seeds) cfg.seeds = parse_seed_list(*opt.seeds);
        cfg.validate();
        const auto manifest = DatasetManifest::load(cfg.manifest);
        manifest.validate_for_training();
        const auto vocab = detail::load_vocab(manifest);
        const auto weights = cfg.weights(vocab);
        detail::prepare_output(cfg.output_dir);
        write_file(cfg.output_dir / "config.json", cfg.to_json().dump(2) + "\n");
        detail::RunLog log(out, cfg.output_dir / "ablate.log");

        ValidationSet validation;
        {
            const auto sessions = load_sessions(manifest.paths(SessionRole::validation));
            validation = build_validation_set(sessions, cfg.train.validation_seed, cfg.train.sampling);
        }
        const auto train = load_sessions(manifest.paths(SessionRole::train));
        const auto results = run_ablation(train, validation.samples, cfg.model, cfg.train, weights, cfg.seeds,
                                          ablation_variants(), [&](const AblationVariant& v, const RunMetrics& m) {
                                              char buf[200];
                                              std::snprintf(buf, sizeof buf, "%s seed %llu: F1 %.2f%% top-3 %.2f%% top-5 %.2f%%",
                                                            v.name.c_str(), static_cast<unsigned long long>(m.seed),
                                                            100.0 * m.f1_macro, 100.0 * m.top3, 100.0 * m.top5);
                                              log.line(buf);
                                          });
        const auto table = ablation_table(results);
        write_file(cfg.output_dir / "ablation.txt", table);
        write_file(cfg.output_dir / "ablation.json", ablation_json(results).dump(2) + "\n");
        out << table;
        return 0;
    });
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(std::ostream& out = std::cout, std::ostream& err = std::cerr,
                         const std::vector<GradCheckCase>& cases = default_gradcheck_cases()) {
    return detail::guarded(err, [&] {
        const auto report = run_gradcheck(cases);
        out << report.to_text();
        if (!report.passed()) {
            std::string names;
            for (const auto& n : report.failures()) names += (names.empty() ? "" : ", ") + n;
            err << "gradcheck failed: " << names << "\n";
            return 1;
        }
        out << "all " << report.rows.size() << " checks passed\n";
        return 0;
    });
}

}  // namespace mebm
