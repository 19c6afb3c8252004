#pragma once

// Synthetic MEG-like recordings with phoneme-locked evoked responses.
//
// Class c has a spatial pattern s_c (306 values, unit RMS) and a temporal
// template g_c: a Gabor burst at a class-specific frequency between 4 and
// 40 Hz under a Gaussian envelope (sigma 50 ms) centered 150 ms after the
// onset, supported on the 125-sample window and scaled to unit RMS there.
// Each event adds amplitude * s_c (x) g_c at its onset; white Gaussian
// noise of unit variance is added on top, so the window-level amplitude
// SNR equals `snr`. An infinite snr produces a noiseless recording.

#include "mebm/data.hpp"

#include <limits>
#include <numbers>

namespace mebm {

struct SynthSpec {
    std::size_t n_sessions = 1;
    std::size_t events_per_class_per_session = 10;
    double snr = 4.0;
    std::uint64_t seed = 0;
    double sample_rate_hz = kSampleRateHz;
    std::size_t channels = kSensors;
    std::size_t min_spacing = 150;     // samples between onsets, at least
    std::size_t spacing_jitter = 10;   // extra spacing drawn from {0..spacing_jitter-1}
    std::size_t lead_in = 16;          // samples before the first onset

    void validate() const {
        if (n_sessions == 0 || events_per_class_per_session == 0 || channels == 0) {
            throw std::invalid_argument("synth: counts must be positive");
        }
        if (std::isnan(snr) || snr < 0.0) throw std::invalid_argument("synth: snr must be >= 0");
        if (sample_rate_hz != kSampleRateHz) throw std::invalid_argument("synth: only 250 Hz is supported");
        if (min_spacing < kWindowSamples + 2 * kMaxJitter) {
            throw std::invalid_argument("synth: events don't fit; spacing must exceed the jittered window");
        }
        if (lead_in < static_cast<std::size_t>(kMaxJitter)) {
            throw std::invalid_argument("synth: lead-in shorter than the jitter range");
        }
    }
};

struct SynthClassPattern {
    std::vector<double> spatial;   // (channels), unit RMS
    std::vector<double> temporal;  // (kWindowSamples), unit RMS
    double frequency_hz = 0.0;
};

/// Fixed per-class patterns shared by every session generated from `seed`.
inline std::vector<SynthClassPattern> synth_class_patterns(std::uint64_t seed, std::size_t channels = kSensors) {
    std::vector<SynthClassPattern> patterns(kNumClasses);
    const double center = 0.150 * kSampleRateHz;
    const double sigma = 0.050 * kSampleRateHz;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        Rng rng = make_stream(seed, "synth-class", c);
        auto& p = patterns[c];
        p.frequency_hz = 4.0 + 36.0 * double(c) / double(kNumClasses - 1);
        p.spatial.resize(channels);
        double ss = 0.0;
        for (auto& v : p.spatial) {
            v = rng.normal();
            ss += v * v;
        }
        for (auto& v : p.spatial) v /= std::sqrt(ss / double(channels));
        const double phase = 2.0 * std::numbers::pi * rng.uniform();
        p.temporal.resize(kWindowSamples);
        ss = 0.0;
        for (std::size_t t = 0; t < kWindowSamples; ++t) {
            const double z = (double(t) - center) / sigma;
            const double v = std::exp(-0.5 * z * z) *
                             std::cos(2.0 * std::numbers::pi * p.frequency_hz * double(t) / kSampleRateHz + phase);
            p.temporal[t] = v;
            ss += v * v;
        }
        for (auto& v : p.temporal) v /= std::sqrt(ss / double(kWindowSamples));
    }
    return patterns;
}

/// Event schedule of one session: every class appears
/// events_per_class_per_session times in shuffled order.
inline std::vector<PhonemeEvent> synth_events(const SynthSpec& spec, std::size_t session, std::size_t& samples) {
    const std::size_t n = kNumClasses * spec.events_per_class_per_session;
    std::vector<PhonemeId> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<PhonemeId>(i % kNumClasses);
    Rng rng = make_stream(spec.seed, "synth-events", session);
    for (std::size_t i = n; i-- > 1;) {
        std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    std::vector<PhonemeEvent> events(n);
    std::uint64_t onset = spec.lead_in;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) {
            onset += spec.min_spacing +
                     static_cast<std::uint64_t>(
                         spec.spacing_jitter ? rng.uniform_int(0, std::int64_t(spec.spacing_jitter) - 1) : 0);
        }
        events[i] = {onset, order[i]};
    }
    samples = static_cast<std::size_t>(onset) + kWindowSamples + 2 * static_cast<std::size_t>(kMaxJitter);
    return events;
}

/// Generates session `index` of the set described by `spec`.
inline SessionRecording synth_session(const SynthSpec& spec, std::size_t index,
                                      const std::vector<SynthClassPattern>& patterns) {
    spec.validate();
    SessionRecording rec;
    rec.session_id = "synth_" + std::to_string(index);
    rec.sample_rate_hz = spec.sample_rate_hz;
    rec.channels = spec.channels;
    rec.events = synth_events(spec, index, rec.samples);
    rec.signal.assign(rec.channels * rec.samples, 0.0f);

    const bool noiseless = std::isinf(spec.snr);
    const double amplitude = noiseless ? 1.0 : spec.snr;
    if (!noiseless) {
        for (std::size_t c = 0; c < rec.channels; ++c) {
            Rng noise = make_stream(spec.seed, "synth-noise", index, c);
            float* row = rec.signal.data() + c * rec.samples;
            for (std::size_t t = 0; t < rec.samples; ++t) row[t] = static_cast<float>(noise.normal());
        }
    }
    if (amplitude > 0.0) {
        for (const auto& e : rec.events) {
            const auto& p = patterns[e.phoneme];
            for (std::size_t c = 0; c < rec.channels; ++c) {
                float* row = rec.signal.data() + c * rec.samples + e.onset;
                const double gain = amplitude * p.spatial[c];
                for (std::size_t t = 0; t < kWindowSamples; ++t) row[t] += static_cast<float>(gain * p.temporal[t]);
            }
        }
    }
    rec.validate();
    return rec;
}

inline std::vector<SessionRecording> synth_generate(const SynthSpec& spec) {
    spec.validate();
    const auto patterns = synth_class_patterns(spec.seed, spec.channels);
    std::vector<SessionRecording> out;
    out.reserve(spec.n_sessions);
    for (std::size_t i = 0; i < spec.n_sessions; ++i) out.push_back(synth_session(spec, i, patterns));
    return out;
}

}  // namespace mebm
