#pragma once

// Averaged-sample construction for validation and training.
//
// For a phoneme class with n events per session on average, a sample is
// the mean of n' single-event windows of that class, re-normalized per
// channel. n' follows a deterministic rule for validation and a
// randomized one for training (see n_prime_val / n_prime_train).

#include "mebm/data.hpp"
#include "mebm/parallel.hpp"

#include <iomanip>
#include <sstream>

namespace mebm {

/// Rounds to the nearest integer, ties to even.
inline std::int64_t round_half_even(double x) {
    const double lower = std::floor(x);
    const double frac = x - lower;
    auto r = static_cast<std::int64_t>(lower);
    if (frac > 0.5 || (frac == 0.5 && (r % 2 != 0))) ++r;
    return r;
}

/// Number of windows averaged per validation sample:
/// 100 for n >= 100, round(n) for 50 <= n < 100, round(1.5 n) below 50;
/// never less than 1.
inline std::int64_t n_prime_val(double n) {
    if (!(n >= 0.0)) throw std::invalid_argument("n_prime_val: n must be >= 0");
    std::int64_t k;
    if (n >= 100.0) {
        k = 100;
    } else if (n >= 50.0) {
        k = round_half_even(n);
    } else {
        k = round_half_even(1.5 * n);
    }
    return std::max<std::int64_t>(1, k);
}

/// Number of windows averaged per training sample:
/// 100 for n >= 100, uniform in [round(n) - 5, min(round(n) + 5, 100)] for
/// 50 <= n < 100, round(2 n) below 50; never less than 1.
inline std::int64_t n_prime_train(double n, Rng& rng) {
    if (!(n >= 0.0)) throw std::invalid_argument("n_prime_train: n must be >= 0");
    std::int64_t k;
    if (n >= 100.0) {
        k = 100;
    } else if (n >= 50.0) {
        const std::int64_t center = round_half_even(n);
        k = rng.uniform_int(center - 5, std::min<std::int64_t>(center + 5, 100));
    } else {
        k = round_half_even(2.0 * n);
    }
    return std::max<std::int64_t>(1, k);
}

/// Event counts per class over a set of sessions.
struct ClassStats {
    std::array<std::size_t, kNumClasses> total_events{};
    std::size_t sessions = 0;

    /// Mean events per session (over every session in the set).
    double mean_per_session(std::size_t c) const {
        return sessions ? double(total_events.at(c)) / double(sessions) : 0.0;
    }

    static ClassStats count(const std::vector<SessionRecording>& set) {
        ClassStats s;
        s.sessions = set.size();
        for (const auto& rec : set) {
            for (const auto& e : rec.events) ++s.total_events.at(e.phoneme);
        }
        return s;
    }
};

struct EventRef {
    std::uint32_t session = 0;
    std::uint32_t event = 0;
    bool operator==(const EventRef&) const = default;
};

/// Events of each class, pooled over sessions and per session.
struct EventIndex {
    std::array<std::vector<EventRef>, kNumClasses> pooled;
    std::array<std::vector<std::vector<EventRef>>, kNumClasses> by_session;

    static EventIndex build(const std::vector<SessionRecording>& set) {
        EventIndex idx;
        for (auto& per : idx.by_session) per.resize(set.size());
        for (std::size_t s = 0; s < set.size(); ++s) {
            for (std::size_t e = 0; e < set[s].events.size(); ++e) {
                const EventRef ref{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)};
                const auto c = set[s].events[e].phoneme;
                idx.pooled.at(c).push_back(ref);
                idx.by_session.at(c)[s].push_back(ref);
            }
        }
        return idx;
    }
};

struct AveragedSample {
    std::vector<float> features;  // (channels x kWindowSamples), per-channel z-scored
    PhonemeId phoneme = 0;
    std::size_t n_averaged = 0;
    std::vector<std::string> source_sessions;
    std::vector<EventRef> draws;
};

struct SamplingOptions {
    std::int64_t max_jitter = kMaxJitter;
    std::size_t validation_iterations = 8;
    std::size_t min_validation_events = 8;  // classes with fewer events are discarded
    bool per_session_train_draws = false;   // draw a training sample's events from one session
};

namespace detail {

/// Mean of the selected windows, then per-channel z-score.
inline AveragedSample average_windows(const std::vector<SessionRecording>& set, PhonemeId phoneme,
                                      std::vector<EventRef> draws, const std::vector<std::int64_t>& offsets) {
    const std::size_t channels = set.at(draws.at(0).session).channels;
    std::vector<double> acc(channels * kWindowSamples, 0.0);
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const auto& rec = set[draws[i].session];
        if (rec.channels != channels) throw std::invalid_argument("sampling: sessions disagree on channel count");
        const std::size_t start = window_start(rec, rec.events[draws[i].event].onset, offsets[i]);
        for (std::size_t c = 0; c < channels; ++c) {
            const float* src = rec.signal.data() + c * rec.samples + start;
            double* dst = acc.data() + c * kWindowSamples;
            for (std::size_t t = 0; t < kWindowSamples; ++t) dst[t] += src[t];
        }
    }
    AveragedSample out;
    out.phoneme = phoneme;
    out.n_averaged = draws.size();
    out.features.resize(acc.size());
    const double inv = 1.0 / double(draws.size());
    for (std::size_t c = 0; c < channels; ++c) {
        std::span<double> row(acc.data() + c * kWindowSamples, kWindowSamples);
        for (auto& v : row) v *= inv;
        zscore(row);
        std::copy(row.begin(), row.end(), out.features.begin() + static_cast<std::ptrdiff_t>(c * kWindowSamples));
    }
    for (const auto& d : draws) {
        const auto& id = set[d.session].session_id;
        if (std::find(out.source_sessions.begin(), out.source_sessions.end(), id) == out.source_sessions.end()) {
            out.source_sessions.push_back(id);
        }
    }
    out.draws = std::move(draws);
    return out;
}

}  // namespace detail

struct DiscardedClass {
    PhonemeId phoneme = 0;
    std::size_t events = 0;
    std::string reason;
};

struct ValidationSet {
    std::vector<AveragedSample> samples;
    std::vector<DiscardedClass> discarded;

    /// Text table: class, event count, reason.
    std::string discard_report(const PhonemeVocab& vocab) const {
        std::ostringstream out;
        out << std::left << std::setw(8) << "class" << std::setw(8) << "events" << "reason\n";
        for (const auto& d : discarded) {
            out << std::setw(8) << vocab.label(d.phoneme) << std::setw(8) << d.events << d.reason << "\n";
        }
        return out.str();
    }
};

/// Eight (by default) jitter-free averaged samples per class with enough
/// events, drawn with replacement from the validation sessions.
inline ValidationSet build_validation_set(const std::vector<SessionRecording>& sessions, std::uint64_t seed,
                                          const SamplingOptions& opt = {}) {
    if (sessions.empty()) throw std::invalid_argument("build_validation_set: no validation sessions");
    const auto stats = ClassStats::count(sessions);
    const auto index = EventIndex::build(sessions);
    ValidationSet out;
    struct Job {
        PhonemeId phoneme;
        std::size_t iteration;
        std::int64_t k;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto& pool = index.pooled[c];
        if (pool.size() < opt.min_validation_events) {
            out.discarded.push_back({static_cast<PhonemeId>(c), pool.size(),
                                     "fewer than " + std::to_string(opt.min_validation_events) + " events"});
            continue;
        }
        const auto k = n_prime_val(stats.mean_per_session(c));
        for (std::size_t it = 0; it < opt.validation_iterations; ++it) {
            jobs.push_back({static_cast<PhonemeId>(c), it, k});
        }
    }
    out.samples.resize(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& pool = index.pooled[job.phoneme];
        Rng rng = make_stream(seed, "validation", job.phoneme, job.iteration);
        std::vector<EventRef> draws(static_cast<std::size_t>(job.k));
        for (auto& d : draws) d = pool[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
        out.samples[j] = detail::average_windows(sessions, job.phoneme, std::move(draws),
                                                 std::vector<std::int64_t>(static_cast<std::size_t>(job.k), 0));
    });
    return out;
}

/// Prepared training-session state shared by every sample draw.
struct TrainingPool {
    const std::vector<SessionRecording>* sessions = nullptr;
    ClassStats stats;
    EventIndex index;

    static TrainingPool build(const std::vector<SessionRecording>& sessions) {
        TrainingPool pool{&sessions, ClassStats::count(sessions), EventIndex::build(sessions)};
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (pool.index.pooled[c].empty()) {
                throw std::invalid_argument("training sessions contain no events of class " + std::to_string(c));
            }
        }
        return pool;
    }
    // The pool points into `sessions`; a temporary would dangle.
    static TrainingPool build(std::vector<SessionRecording>&&) = delete;
};

/// One training sample: uniform class, n' = n_prime_train(n) windows drawn
/// with replacement and jittered, averaged, re-normalized.
inline AveragedSample make_training_sample(const TrainingPool& pool, Rng& rng, const SamplingOptions& opt = {}) {
    const auto phoneme = static_cast<PhonemeId>(rng.uniform_int(0, kNumClasses - 1));
    const std::int64_t k = n_prime_train(pool.stats.mean_per_session(phoneme), rng);
    const std::vector<EventRef>* source = &pool.index.pooled[phoneme];
    if (source->empty()) throw std::invalid_argument("no training events for class " + std::to_string(phoneme));
    if (opt.per_session_train_draws) {
        std::vector<const std::vector<EventRef>*> candidates;
        for (const auto& per : pool.index.by_session[phoneme]) {
            if (!per.empty()) candidates.push_back(&per);
        }
        source = candidates[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(candidates.size()) - 1))];
    }
    std::vector<EventRef> draws(static_cast<std::size_t>(k));
    std::vector<std::int64_t> offsets(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) {
        draws[i] = (*source)[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(source->size()) - 1))];
        offsets[i] = draw_jitter(rng, opt.max_jitter);
    }
    return detail::average_windows(*pool.sessions, phoneme, std::move(draws), offsets);
}

}  // namespace mebm
