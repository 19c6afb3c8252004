#include "mebm/sampling.hpp"
#include "mebm/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mebm;

namespace {

std::vector<SessionRecording> small_sessions(std::size_t n_sessions, std::size_t per_class, std::uint64_t seed = 0,
                                             std::size_t channels = 6) {
    SynthSpec spec;
    spec.n_sessions = n_sessions;
    spec.events_per_class_per_session = per_class;
    spec.channels = channels;
    spec.seed = seed;
    auto sessions = synth_generate(spec);
    for (auto& s : sessions) s = session_normalize(std::move(s));
    return sessions;
}

// Piecewise definitions written out independently of the library.
long oracle_val(double n) {
    double k;
    if (n >= 100) k = 100;
    else if (n >= 50) k = std::nearbyint(n);
    else k = std::nearbyint(1.5 * n);
    return std::max(1L, long(k));
}

}  // namespace

TEST(RoundHalfEven, Ties) {
    EXPECT_EQ(round_half_even(0.5), 0);
    EXPECT_EQ(round_half_even(1.5), 2);
    EXPECT_EQ(round_half_even(2.5), 2);
    EXPECT_EQ(round_half_even(2.4999), 2);
    EXPECT_EQ(round_half_even(3.5), 4);
    EXPECT_EQ(round_half_even(74.5), 74);
}

TEST(NPrime, ValidationExamples) {
    EXPECT_EQ(n_prime_val(120), 100);
    EXPECT_EQ(n_prime_val(60), 60);
    EXPECT_EQ(n_prime_val(30), 45);
    EXPECT_EQ(n_prime_val(100), 100);
    EXPECT_EQ(n_prime_val(0), 1);
    EXPECT_THROW(n_prime_val(-1), std::invalid_argument);
}

TEST(NPrime, TrainingExamples) {
    Rng rng(1);
    EXPECT_EQ(n_prime_train(30, rng), 60);
    EXPECT_EQ(n_prime_train(100, rng), 100);
    EXPECT_EQ(n_prime_train(150, rng), 100);
    EXPECT_EQ(n_prime_train(0.1, rng), 1);
    EXPECT_THROW(n_prime_train(-0.5, rng), std::invalid_argument);
}

TEST(NPrime, TrainingMiddleBandCoversRange) {
    Rng rng(2);
    std::map<long, int> seen;
    for (int i = 0; i < 10000; ++i) ++seen[n_prime_train(60, rng)];
    ASSERT_EQ(seen.size(), 11u);
    EXPECT_EQ(seen.begin()->first, 55);
    EXPECT_EQ(seen.rbegin()->first, 65);
    for (int i = 0; i < 2000; ++i) {
        const auto k = n_prime_train(98, rng);
        EXPECT_GE(k, 93);
        EXPECT_LE(k, 100);
    }
}

TEST(NPrime, SweepAgainstPiecewiseOracle) {
    Rng rng(3);
    for (int i = 1; i <= 300; ++i) {
        const double n = 0.5 * i;
        EXPECT_EQ(n_prime_val(n), oracle_val(n)) << n;
        EXPECT_LE(n_prime_val(n), 100);
        const auto k = n_prime_train(n, rng);
        EXPECT_LE(k, 100) << n;
        if (n >= 100) {
            EXPECT_EQ(k, 100);
        } else if (n >= 50) {
            const long c = long(std::nearbyint(n));
            EXPECT_GE(k, c - 5) << n;
            EXPECT_LE(k, std::min(c + 5, 100L)) << n;
        } else {
            EXPECT_EQ(k, std::max(1L, long(std::nearbyint(2 * n)))) << n;
        }
    }
}

TEST(ClassStats, MatchesBruteForceRecount) {
    auto sessions = small_sessions(3, 2);
    sessions[1].events.resize(40);  // uneven counts
    const auto stats = ClassStats::count(sessions);
    EXPECT_EQ(stats.sessions, 3u);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::size_t total = 0;
        for (const auto& s : sessions)
            for (const auto& e : s.events) total += e.phoneme == c;
        EXPECT_EQ(stats.total_events[c], total);
        EXPECT_DOUBLE_EQ(stats.mean_per_session(c), double(total) / 3.0);
    }
}

TEST(ValidationSet, EightSamplesPerEligibleClass) {
    const auto sessions = small_sessions(2, 4);
    const auto set = build_validation_set(sessions, 7);
    EXPECT_EQ(set.samples.size(), 312u);
    EXPECT_TRUE(set.discarded.empty());
    std::vector<int> per_class(kNumClasses, 0);
    for (const auto& s : set.samples) {
        ++per_class[s.phoneme];
        // n = 4 per session -> round(1.5 * 4) = 6 windows
        EXPECT_EQ(s.n_averaged, 6u);
        for (const auto& d : s.draws) EXPECT_EQ(sessions[d.session].events[d.event].phoneme, s.phoneme);
    }
    for (int n : per_class) EXPECT_EQ(n, 8);
}

TEST(ValidationSet, SparseClassDiscardedAndReported) {
    auto sessions = small_sessions(1, 8);
    // Keep only five events of class 3.
    std::vector<PhonemeEvent> kept;
    int seen = 0;
    for (const auto& e : sessions[0].events) {
        if (e.phoneme == 3 && ++seen > 5) continue;
        kept.push_back(e);
    }
    sessions[0].events = kept;
    const auto set = build_validation_set(sessions, 0);
    EXPECT_EQ(set.samples.size(), 38u * 8u);
    for (const auto& s : set.samples) EXPECT_NE(s.phoneme, 3);
    ASSERT_EQ(set.discarded.size(), 1u);
    EXPECT_EQ(set.discarded[0].phoneme, 3);
    EXPECT_EQ(set.discarded[0].events, 5u);
    const auto report = set.discard_report(PhonemeVocab::standard());
    EXPECT_NE(report.find("ao"), std::string::npos);
    EXPECT_NE(report.find("fewer than 8 events"), std::string::npos);
}

TEST(ValidationSet, SameSeedSameComposition) {
    const auto sessions = small_sessions(2, 4);
    const auto a = build_validation_set(sessions, 11);
    const auto b = build_validation_set(sessions, 11);
    const auto c = build_validation_set(sessions, 12);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].draws, b.samples[i].draws);
        EXPECT_EQ(a.samples[i].features, b.samples[i].features);
        any_diff |= a.samples[i].draws != c.samples[i].draws;
    }
    EXPECT_TRUE(any_diff);
}

TEST(ValidationSet, NoSessions) { EXPECT_THROW(build_validation_set({}, 0), std::invalid_argument); }

TEST(TrainingSample, IdenticalDrawsGiveNormalizedWindow) {
    const auto sessions = small_sessions(1, 2);
    const EventRef ref{0, 5};
    const auto s = detail::average_windows(sessions, sessions[0].events[5].phoneme, std::vector<EventRef>(9, ref),
                                           std::vector<std::int64_t>(9, 0));
    Rng rng(0);
    auto window = extract_window(sessions[0], sessions[0].events[5].onset, false, rng);
    std::vector<double> expected(window.begin(), window.end());
    for (std::size_t c = 0; c < sessions[0].channels; ++c) {
        zscore(std::span<double>(expected.data() + c * kWindowSamples, kWindowSamples));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(s.features[i], expected[i], 1e-5);
    EXPECT_EQ(s.n_averaged, 9u);
    EXPECT_EQ(s.source_sessions, std::vector<std::string>{sessions[0].session_id});
}

TEST(TrainingSample, FeaturesStandardizedAndClassConsistent) {
    const auto sessions = small_sessions(3, 2);
    const auto pool = TrainingPool::build(sessions);
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const auto s = make_training_sample(pool, rng);
        // n = 2 per session -> round(4) windows
        EXPECT_EQ(s.n_averaged, 4u);
        for (const auto& d : s.draws) EXPECT_EQ(sessions[d.session].events[d.event].phoneme, s.phoneme);
        for (std::size_t c = 0; c < sessions[0].channels; ++c) {
            double m = 0.0, ss = 0.0;
            for (std::size_t t = 0; t < kWindowSamples; ++t) m += s.features[c * kWindowSamples + t];
            m /= double(kWindowSamples);
            for (std::size_t t = 0; t < kWindowSamples; ++t) ss += std::pow(s.features[c * kWindowSamples + t] - m, 2);
            EXPECT_NEAR(m, 0.0, 1e-5);
            EXPECT_NEAR(std::sqrt(ss / double(kWindowSamples)), 1.0, 1e-5);
        }
    }
}

TEST(TrainingSample, ClassMarginalIsUniform) {
    const auto sessions = small_sessions(1, 1, 0, 2);
    const auto pool = TrainingPool::build(sessions);
    Rng rng(5);
    const int draws = 100000;
    std::vector<int> counts(kNumClasses, 0);
    for (int i = 0; i < draws; ++i) ++counts[make_training_sample(pool, rng).phoneme];
    const double p = 1.0 / kNumClasses, sigma = std::sqrt(draws * p * (1 - p));
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_LT(std::abs(counts[c] - draws * p), 3 * sigma) << c;
}

TEST(TrainingSample, PerSessionDrawsStayInOneSession) {
    const auto sessions = small_sessions(3, 2);
    const auto pool = TrainingPool::build(sessions);
    SamplingOptions opt;
    opt.per_session_train_draws = true;
    Rng rng(6);
    for (int i = 0; i < 30; ++i) EXPECT_EQ(make_training_sample(pool, rng, opt).source_sessions.size(), 1u);
}

TEST(TrainingSample, MissingClassRejected) {
    auto sessions = small_sessions(1, 1);
    std::erase_if(sessions[0].events, [](const PhonemeEvent& e) { return e.phoneme == 12; });
    EXPECT_THROW(TrainingPool::build(sessions), std::invalid_argument);
}

TEST(Averaging, SnrGrowsAsSqrtK) {
    // Raw means (before re-normalization) of k windows of one class: the
    // signal part is fixed, the noise power falls as 1/k.
    SynthSpec spec;
    spec.channels = 24;
    spec.events_per_class_per_session = 64;
    spec.snr = 0.5;
    const auto rec = synth_generate(spec)[0];
    const auto patterns = synth_class_patterns(spec.seed, spec.channels);
    const PhonemeId cls = 11;
    std::vector<std::uint64_t> onsets;
    for (const auto& e : rec.events) {
        if (e.phoneme == cls) onsets.push_back(e.onset);
    }
    ASSERT_EQ(onsets.size(), 64u);
    const auto& p = patterns[cls];
    auto snr_of_mean = [&](std::size_t k) {
        double ps = 0.0, pn = 0.0;
        for (std::size_t g = 0; g + k <= onsets.size(); g += k) {
            for (std::size_t c = 0; c < spec.channels; ++c)
                for (std::size_t t = 0; t < kWindowSamples; ++t) {
                    double mean = 0.0;
                    for (std::size_t i = g; i < g + k; ++i) mean += rec.at(c, onsets[i] + t);
                    mean /= double(k);
                    const double s = spec.snr * p.spatial[c] * p.temporal[t];
                    ps += s * s;
                    pn += (mean - s) * (mean - s);
                }
        }
        return std::sqrt(ps / pn);
    };
    const double base = snr_of_mean(1);
    for (std::size_t k : {4, 16, 64}) {
        const double ratio = snr_of_mean(k) / base;
        EXPECT_NEAR(ratio / std::sqrt(double(k)), 1.0, 0.25) << "k = " << k;
    }
}
