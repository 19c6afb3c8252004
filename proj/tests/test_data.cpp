#include "mebm/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mebm;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("mebm_test_" + name);
}

SessionRecording small_recording(std::size_t channels = 4, std::size_t samples = 600) {
    SessionRecording rec;
    rec.session_id = "s";
    rec.channels = channels;
    rec.samples = samples;
    rec.signal.resize(channels * samples);
    Rng rng(1);
    for (auto& v : rec.signal) v = static_cast<float>(rng.normal() * 3.0 + 1.5);
    rec.events = {{10, 0}, {150, 38}, {300, 7}};
    return rec;
}

}  // namespace

TEST(Vocab, StandardInventory) {
    const auto vocab = PhonemeVocab::standard();
    EXPECT_EQ(vocab.size(), 39u);
    for (const char* label : {"ey", "ay", "uh", "uw", "s", "sh", "m", "ae", "jh", "ah"}) {
        EXPECT_TRUE(vocab.contains(label)) << label;
    }
    EXPECT_EQ(vocab.label(vocab.id("zh")), "zh");
    EXPECT_THROW(vocab.id("xx"), std::out_of_range);
}

TEST(Vocab, TextRoundTripAndErrors) {
    const auto vocab = PhonemeVocab::standard();
    EXPECT_EQ(PhonemeVocab::from_text(vocab.to_text()).labels(), vocab.labels());
    EXPECT_THROW(PhonemeVocab::from_text("aa\nbb\n"), std::invalid_argument);
    auto labels = vocab.labels();
    labels[1] = labels[0];
    EXPECT_THROW(PhonemeVocab{labels}, std::invalid_argument);
}

TEST(Megb, RoundTrip) {
    const auto rec = small_recording();
    const auto path = temp_file("roundtrip.megb");
    write_megb(rec, path);
    auto back = read_megb(path);
    EXPECT_EQ(back.session_id, "mebm_test_roundtrip");
    back.session_id = rec.session_id;
    EXPECT_EQ(back, rec);
    std::filesystem::remove(path);
}

TEST(Megb, HeaderSize) {
    const auto rec = small_recording();
    const auto path = temp_file("header.megb");
    write_megb(rec, path);
    EXPECT_EQ(megb_header_size(3), 4u + 4 + 4 + 8 + 8 + 8 + 30);
    EXPECT_EQ(std::filesystem::file_size(path), megb_header_size(3) + 4 * 600 * 4);
    const auto bytes = read_file(path);
    EXPECT_EQ(std::string(bytes.data(), 4), "MEGB");
    std::filesystem::remove(path);
}

TEST(Megb, LateEventRejectedOnWrite) {
    auto rec = small_recording();
    rec.events.push_back({600 - 128, 1});
    EXPECT_NO_THROW(rec.validate());
    rec.events.back().onset = 600 - 127;
    EXPECT_THROW(write_megb(rec, temp_file("late.megb")), std::out_of_range);
}

TEST(Megb, InvalidEvents) {
    auto rec = small_recording();
    rec.events[1].phoneme = 39;
    EXPECT_THROW(rec.validate(), std::out_of_range);
    rec = small_recording();
    rec.events[2].onset = rec.events[1].onset;
    EXPECT_THROW(rec.validate(), std::invalid_argument);
    rec = small_recording();
    rec.sample_rate_hz = 1000.0;
    EXPECT_THROW(rec.validate(), std::invalid_argument);
}

TEST(Megb, CorruptFiles) {
    const auto rec = small_recording();
    const auto path = temp_file("corrupt.megb");
    write_megb(rec, path);
    auto bytes = read_file(path);
    EXPECT_THROW(decode_megb(std::span<const char>(bytes.data(), bytes.size() - 4), "f"), FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_megb(std::span<const char>(bad), "f"), FormatError);
    bad = bytes;
    bad[4] = 2;
    EXPECT_THROW(decode_megb(std::span<const char>(bad), "f"), FormatError);
    EXPECT_THROW(read_megb(temp_file("missing.megb")), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(Normalize, TwoValueChannel) {
    std::vector<double> v{0.0, 2.0};
    zscore(std::span<double>(v));
    EXPECT_NEAR(v[0], -1.0, 1e-7);
    EXPECT_NEAR(v[1], 1.0, 1e-7);
}

TEST(Normalize, ConstantChannelGoesToZero) {
    auto rec = small_recording();
    for (auto& v : rec.channel(2)) v = 7.25f;
    const auto out = session_normalize(rec);
    for (float v : out.channel(2)) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Normalize, ChannelsStandardized) {
    const auto out = session_normalize(small_recording());
    for (std::size_t c = 0; c < out.channels; ++c) {
        double s = 0.0, ss = 0.0;
        for (float v : out.channel(c)) s += v;
        const double mu = s / double(out.samples);
        for (float v : out.channel(c)) ss += (v - mu) * (v - mu);
        // float storage bounds how close the mean gets to zero
        EXPECT_LT(std::abs(mu), 1e-6);
        EXPECT_NEAR(std::sqrt(ss / double(out.samples)), 1.0, 1e-6);
    }
    EXPECT_EQ(out.events, small_recording().events);
}

TEST(Normalize, DoubleZscoreMeetsTightBounds) {
    Rng rng(2);
    std::vector<double> v(5000);
    for (auto& x : v) x = 4.0 * rng.normal() - 2.0;
    zscore(std::span<double>(v));
    double s = 0.0, ss = 0.0;
    for (double x : v) s += x;
    for (double x : v) ss += (x - s / 5000.0) * (x - s / 5000.0);
    EXPECT_LT(std::abs(s / 5000.0), 1e-9);
    EXPECT_NEAR(std::sqrt(ss / 5000.0), 1.0, 1e-6);
}

TEST(Normalize, Idempotent) {
    const auto once = session_normalize(small_recording());
    const auto twice = session_normalize(once);
    for (std::size_t i = 0; i < once.signal.size(); ++i) EXPECT_NEAR(once.signal[i], twice.signal[i], 1e-6);
}

TEST(Window, NoJitterStartsAtOnset) {
    const auto rec = small_recording();
    Rng rng(3);
    const auto w = extract_window(rec, 100, false, rng);
    ASSERT_EQ(w.size(), 4u * 125);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t t = 0; t < 125; ++t) EXPECT_EQ(w[c * 125 + t], rec.at(c, 100 + t));
}

TEST(Window, JitterIsUniformOverSevenOffsets) {
    auto rec = small_recording(1, 400);
    for (std::size_t t = 0; t < rec.samples; ++t) rec.signal[t] = static_cast<float>(t);
    Rng rng(4);
    std::map<long, std::size_t> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto w = extract_window(rec, 100, true, rng);
        ++counts[long(w[0]) - 100];
        // Slice oracle: consecutive samples from the drawn start.
        ASSERT_EQ(w[124], w[0] + 124.0f);
    }
    ASSERT_EQ(counts.size(), 7u);
    const double p = 1.0 / 7.0, sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [delta, n] : counts) {
        EXPECT_GE(delta, -3);
        EXPECT_LE(delta, 3);
        EXPECT_LT(std::abs(double(n) - draws * p), 3.0 * sigma) << "delta " << delta;
    }
}

TEST(Window, OutOfBounds) {
    const auto rec = small_recording();
    Rng rng(5);
    EXPECT_THROW(extract_window(rec, 600 - 120, true, rng), std::out_of_range);
    EXPECT_THROW(extract_window(rec, 600 - 124, false, rng), std::out_of_range);
    EXPECT_NO_THROW(extract_window(rec, 600 - 125, false, rng));
    EXPECT_THROW(extract_window(rec, 2, true, rng), std::out_of_range);
}

TEST(Manifest, JsonRoundTripResolvesRelativePaths) {
    DatasetManifest m;
    m.vocab_path = "vocab.txt";
    m.sessions = {{"a.megb", SessionRole::train}, {"b.megb", SessionRole::validation}};
    const auto back = DatasetManifest::from_json(m.to_json(), "/data");
    EXPECT_EQ(back.vocab_path, std::filesystem::path("/data/vocab.txt"));
    ASSERT_EQ(back.paths(SessionRole::train).size(), 1u);
    EXPECT_EQ(back.paths(SessionRole::validation)[0], std::filesystem::path("/data/b.megb"));
    EXPECT_NO_THROW(back.validate_for_training());
}

TEST(Manifest, Errors) {
    DatasetManifest m;
    m.sessions = {{"a.megb", SessionRole::train}};
    EXPECT_THROW(m.validate_for_training(), std::invalid_argument);
    auto j = m.to_json();
    j["extra"] = 1;
    EXPECT_THROW(DatasetManifest::from_json(j), std::invalid_argument);
    j = m.to_json();
    j["sessions"][0]["role"] = "test";
    EXPECT_THROW(DatasetManifest::from_json(j), std::invalid_argument);
    EXPECT_THROW(DatasetManifest::load(temp_file("missing.json")), std::runtime_error);
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
    SynthSpec spec;
    spec.n_sessions = 2;
    spec.events_per_class_per_session = 1;
    const auto a = synth_generate(spec);
    const auto b = synth_generate(spec);
    EXPECT_EQ(a, b);
    spec.seed = 1;
    EXPECT_NE(synth_generate(spec)[0].signal, a[0].signal);
}

TEST(Synth, EventsSpacedAndBalanced) {
    SynthSpec spec;
    spec.events_per_class_per_session = 3;
    const auto rec = synth_generate(spec)[0];
    std::vector<int> per_class(kNumClasses, 0);
    for (std::size_t i = 0; i < rec.events.size(); ++i) {
        ++per_class[rec.events[i].phoneme];
        if (i > 0) EXPECT_GE(rec.events[i].onset - rec.events[i - 1].onset, 150u);
    }
    for (int n : per_class) EXPECT_EQ(n, 3);
    EXPECT_NO_THROW(rec.validate());
}

TEST(Synth, NoiselessWindowReproducesPattern) {
    SynthSpec spec;
    spec.events_per_class_per_session = 1;
    spec.snr = std::numeric_limits<double>::infinity();
    const auto rec = synth_generate(spec)[0];
    const auto patterns = synth_class_patterns(spec.seed);
    Rng rng(6);
    // Spacing >= 150 > 125, so windows never overlap a neighbour's response.
    for (std::size_t i = 0; i < rec.events.size(); i += 7) {
        const auto& e = rec.events[i];
        const auto w = extract_window(rec, e.onset, false, rng);
        const auto& p = patterns[e.phoneme];
        for (std::size_t c = 0; c < rec.channels; c += 17)
            for (std::size_t t = 0; t < kWindowSamples; ++t)
                ASSERT_NEAR(w[c * kWindowSamples + t], p.spatial[c] * p.temporal[t], 1e-5);
    }
}

TEST(Synth, PatternFrequenciesSpanRange) {
    const auto patterns = synth_class_patterns(0);
    EXPECT_DOUBLE_EQ(patterns.front().frequency_hz, 4.0);
    EXPECT_DOUBLE_EQ(patterns.back().frequency_hz, 40.0);
}

TEST(Synth, EmpiricalSnrMatchesRequest) {
    // Signal power from a noiseless twin; noise power from the difference.
    SynthSpec spec;
    spec.events_per_class_per_session = 3;  // 117 events
    spec.snr = 2.5;
    const auto noisy = synth_generate(spec)[0];
    auto clean_spec = spec;
    clean_spec.snr = std::numeric_limits<double>::infinity();
    const auto clean = synth_generate(clean_spec)[0];
    double ps = 0.0, pn = 0.0;
    std::size_t count = 0;
    for (const auto& e : noisy.events) {
        for (std::size_t c = 0; c < noisy.channels; ++c)
            for (std::size_t t = 0; t < kWindowSamples; ++t) {
                const double s = spec.snr * clean.at(c, e.onset + t);
                const double n = noisy.at(c, e.onset + t) - s;
                ps += s * s;
                pn += n * n;
                ++count;
            }
    }
    ASSERT_GE(noisy.events.size(), 100u);
    const double measured = std::sqrt(ps / pn);
    EXPECT_NEAR(measured / spec.snr, 1.0, 0.10);
}

TEST(Synth, InvalidSpecs) {
    SynthSpec spec;
    spec.snr = -1.0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.n_sessions = 0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.min_spacing = 100;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
}
