#pragma once

// Recordings, phoneme vocabulary, on-disk formats, normalization and
// window extraction.
//
// MEGB layout (little-endian):
//   "MEGB" | u32 version=1 | u32 channels | u64 samples | f64 sample_rate |
//   u64 event_count | events: (u64 onset, u16 phoneme_id) ... |
//   f32 signal, row-major channels x samples

#include "mebm/binary_io.hpp"
#include "mebm/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <map>
#include <optional>

namespace mebm {

inline constexpr std::size_t kNumClasses = 39;
inline constexpr std::size_t kSensors = 306;
inline constexpr double kSampleRateHz = 250.0;
inline constexpr std::size_t kWindowSamples = 125;  // 0.5 s at 250 Hz
inline constexpr std::int64_t kMaxJitter = 3;
inline constexpr std::uint32_t kMegbVersion = 1;

using PhonemeId = std::uint16_t;

class PhonemeVocab {
public:
    /// 39-phoneme ARPAbet inventory, lowercase, without stress marks.
    static PhonemeVocab standard() {
        return PhonemeVocab({"aa", "ae", "ah", "ao", "aw", "ay", "b",  "ch", "d",  "dh",
                             "eh", "er", "ey", "f",  "g",  "hh", "ih", "iy", "jh", "k",
                             "l",  "m",  "n",  "ng", "ow", "oy", "p",  "r",  "s",  "sh",
                             "t",  "th", "uh", "uw", "v",  "w",  "y",  "z",  "zh"});
    }

    explicit PhonemeVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
        if (labels_.size() != kNumClasses) {
            throw std::invalid_argument("vocab: expected " + std::to_string(kNumClasses) + " labels, got " +
                                        std::to_string(labels_.size()));
        }
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i].empty()) throw std::invalid_argument("vocab: empty label");
            if (!ids_.emplace(labels_[i], static_cast<PhonemeId>(i)).second) {
                throw std::invalid_argument("vocab: duplicate label " + labels_[i]);
            }
        }
    }

    std::size_t size() const { return labels_.size(); }
    const std::string& label(std::size_t id) const { return labels_.at(id); }
    const std::vector<std::string>& labels() const { return labels_; }

    PhonemeId id(const std::string& label) const {
        auto it = ids_.find(label);
        if (it == ids_.end()) throw std::out_of_range("vocab: unknown phoneme " + label);
        return it->second;
    }

    bool contains(const std::string& label) const { return ids_.count(label) != 0; }

    std::string to_text() const {
        std::string out;
        for (const auto& l : labels_) out += l + "\n";
        return out;
    }

    static PhonemeVocab from_text(std::string_view text) {
        std::vector<std::string> labels;
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string line(text.substr(pos, end - pos));
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) labels.push_back(line);
            pos = end + 1;
        }
        return PhonemeVocab(std::move(labels));
    }

    static PhonemeVocab load(const std::filesystem::path& path) {
        const auto data = read_file(path);
        return from_text(std::string_view(data.data(), data.size()));
    }

    void save(const std::filesystem::path& path) const { write_file(path, to_text()); }

private:
    std::vector<std::string> labels_;
    std::map<std::string, PhonemeId> ids_;
};

struct PhonemeEvent {
    std::uint64_t onset = 0;
    PhonemeId phoneme = 0;
    bool operator==(const PhonemeEvent&) const = default;
};

/// One continuous recording, signal stored channel-major.
struct SessionRecording {
    std::string session_id;
    double sample_rate_hz = kSampleRateHz;
    std::size_t channels = kSensors;
    std::size_t samples = 0;
    std::vector<float> signal;
    std::vector<PhonemeEvent> events;

    float at(std::size_t channel, std::size_t t) const { return signal[channel * samples + t]; }
    std::span<const float> channel(std::size_t c) const {
        return std::span<const float>(signal).subspan(c * samples, samples);
    }
    std::span<float> channel(std::size_t c) { return std::span<float>(signal).subspan(c * samples, samples); }

    /// Checks the sample rate, signal size and that every event admits a
    /// full window at the largest jitter offset.
    void validate(std::int64_t max_jitter = kMaxJitter, std::size_t window = kWindowSamples) const {
        if (sample_rate_hz != kSampleRateHz) {
            throw std::invalid_argument("session " + session_id + ": sample rate " + std::to_string(sample_rate_hz) +
                                        " Hz unsupported (only 250 Hz)");
        }
        if (channels == 0 || signal.size() != channels * samples) {
            throw std::invalid_argument("session " + session_id + ": signal size does not match channels x samples");
        }
        const auto reach = static_cast<std::uint64_t>(max_jitter) + window;
        for (std::size_t i = 0; i < events.size(); ++i) {
            const auto& e = events[i];
            if (e.phoneme >= kNumClasses) {
                throw std::out_of_range("session " + session_id + ": phoneme id " + std::to_string(e.phoneme) +
                                        " out of range");
            }
            if (i > 0 && e.onset <= events[i - 1].onset) {
                throw std::invalid_argument("session " + session_id + ": onsets not strictly increasing");
            }
            if (e.onset < static_cast<std::uint64_t>(max_jitter) || e.onset + reach > samples) {
                throw std::out_of_range("session " + session_id + ": event at onset " + std::to_string(e.onset) +
                                        " does not fit a jittered window in " + std::to_string(samples) +
                                        " samples");
            }
        }
    }

    bool operator==(const SessionRecording&) const = default;
};

// ---------------------------------------------------------------------------
// MEGB files

inline std::size_t megb_header_size(std::size_t n_events) { return 4 + 4 + 4 + 8 + 8 + 8 + 10 * n_events; }

inline void write_megb(const SessionRecording& rec, const std::filesystem::path& path) {
    rec.validate();
    ByteWriter header;
    header.bytes("MEGB");
    header.u32(kMegbVersion);
    header.u32(static_cast<std::uint32_t>(rec.channels));
    header.u64(rec.samples);
    header.f64(rec.sample_rate_hz);
    header.u64(rec.events.size());
    for (const auto& e : rec.events) {
        header.u64(e.onset);
        header.u16(e.phoneme);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(header.buffer().data(), static_cast<std::streamsize>(header.buffer().size()));
    constexpr std::size_t chunk = 1 << 20;
    for (std::size_t start = 0; start < rec.signal.size(); start += chunk) {
        const std::size_t n = std::min(chunk, rec.signal.size() - start);
        ByteWriter payload;
        payload.f32_array(std::span<const float>(rec.signal).subspan(start, n));
        out.write(payload.buffer().data(), static_cast<std::streamsize>(payload.buffer().size()));
    }
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline SessionRecording decode_megb(std::span<const char> data, const std::string& context) {
    ByteReader r(data, context);
    if (r.bytes(4) != "MEGB") r.fail("bad magic (expected \"MEGB\")");
    if (const auto version = r.u32(); version != kMegbVersion) {
        r.fail("unsupported version " + std::to_string(version));
    }
    SessionRecording rec;
    rec.channels = r.u32();
    rec.samples = r.u64();
    rec.sample_rate_hz = r.f64();
    const std::uint64_t n_events = r.u64();
    if (n_events > r.remaining() / 10) r.fail("truncated event table");
    rec.events.resize(n_events);
    for (auto& e : rec.events) {
        e.onset = r.u64();
        e.phoneme = r.u16();
    }
    if (rec.channels != 0 && rec.samples > r.remaining() / sizeof(float) / rec.channels) r.fail("truncated payload");
    rec.signal.resize(rec.channels * rec.samples);
    r.f32_array(std::span<float>(rec.signal));
    if (r.remaining() != 0) r.fail("trailing bytes after signal payload");
    try {
        rec.validate();
    } catch (const std::exception& e) {
        r.fail(e.what());
    }
    return rec;
}

inline SessionRecording read_megb(const std::filesystem::path& path) {
    const auto data = read_file(path);
    auto rec = decode_megb(std::span<const char>(data), path.string());
    rec.session_id = path.stem().string();
    return rec;
}

// ---------------------------------------------------------------------------
// Normalization and windows

/// Z-scores values in place: (x - mean) / (population std + 1e-8).
template <class U>
void zscore(std::span<U> values, double eps = 1e-8) {
    double s = 0.0;
    for (const U v : values) s += v;
    const double mu = s / double(values.size());
    double ss = 0.0;
    for (const U v : values) ss += (v - mu) * (v - mu);
    const double inv = 1.0 / (std::sqrt(ss / double(values.size())) + eps);
    for (U& v : values) v = static_cast<U>((v - mu) * inv);
}

/// Per-channel z-score over the whole session.
inline SessionRecording session_normalize(SessionRecording rec) {
    if (rec.samples < 2) throw std::invalid_argument("session_normalize: need at least two samples");
    for (std::size_t c = 0; c < rec.channels; ++c) zscore(rec.channel(c));
    return rec;
}

/// Offset drawn uniformly from {-max_jitter, ..., +max_jitter}.
inline std::int64_t draw_jitter(Rng& rng, std::int64_t max_jitter = kMaxJitter) {
    return max_jitter > 0 ? rng.uniform_int(-max_jitter, max_jitter) : 0;
}

/// First sample of the window, after bounds checking.
inline std::size_t window_start(const SessionRecording& rec, std::uint64_t onset, std::int64_t offset,
                                std::size_t window = kWindowSamples) {
    const auto start = static_cast<std::int64_t>(onset) + offset;
    if (start < 0 || static_cast<std::uint64_t>(start) + window > rec.samples) {
        throw std::out_of_range("window [" + std::to_string(start) + ", " + std::to_string(start + std::int64_t(window)) +
                                ") outside session " + rec.session_id + " of " + std::to_string(rec.samples) +
                                " samples");
    }
    return static_cast<std::size_t>(start);
}

/// Copies a (channels x window) slice starting at `start`.
inline std::vector<float> window_at(const SessionRecording& rec, std::size_t start, std::size_t window = kWindowSamples) {
    std::vector<float> out(rec.channels * window);
    for (std::size_t c = 0; c < rec.channels; ++c) {
        const float* src = rec.signal.data() + c * rec.samples + start;
        std::copy(src, src + window, out.data() + c * window);
    }
    return out;
}

/// Extracts the window for one event. With jitter the start is
/// onset + delta, delta uniform over {-max_jitter..max_jitter}; otherwise
/// the window starts at the onset.
inline std::vector<float> extract_window(const SessionRecording& rec, std::uint64_t onset, bool jitter, Rng& rng,
                                         std::int64_t max_jitter = kMaxJitter) {
    if (jitter) {
        // both extremes must fit, whatever the draw
        window_start(rec, onset, -max_jitter);
        window_start(rec, onset, max_jitter);
    }
    const std::int64_t offset = jitter ? draw_jitter(rng, max_jitter) : 0;
    return window_at(rec, window_start(rec, onset, offset));
}

// ---------------------------------------------------------------------------
// Manifest

enum class SessionRole { train, validation };

inline std::string to_string(SessionRole role) { return role == SessionRole::train ? "train" : "validation"; }

inline SessionRole parse_role(const std::string& text) {
    if (text == "train") return SessionRole::train;
    if (text == "validation") return SessionRole::validation;
    throw std::invalid_argument("manifest: unknown session role \"" + text + "\"");
}

struct DatasetManifest {
    struct Entry {
        std::filesystem::path path;
        SessionRole role = SessionRole::train;
    };

    int format_version = 1;
    std::filesystem::path vocab_path;
    std::vector<Entry> sessions;

    std::vector<std::filesystem::path> paths(SessionRole role) const {
        std::vector<std::filesystem::path> out;
        for (const auto& s : sessions) {
            if (s.role == role) out.push_back(s.path);
        }
        return out;
    }

    void validate_for_training() const {
        if (paths(SessionRole::train).empty()) throw std::invalid_argument("manifest: no train sessions");
        if (paths(SessionRole::validation).empty()) throw std::invalid_argument("manifest: no validation sessions");
    }

    /// Paths are written as stored.
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = format_version;
        j["vocab"] = vocab_path.generic_string();
        j["sessions"] = nlohmann::json::array();
        for (const auto& s : sessions) {
            j["sessions"].push_back({{"path", s.path.generic_string()}, {"role", to_string(s.role)}});
        }
        return j;
    }

    /// Parses a manifest; relative paths are resolved against `base`.
    static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
        DatasetManifest m;
        for (const auto& [key, value] : j.items()) {
            if (key != "format_version" && key != "vocab" && key != "sessions") {
                throw std::invalid_argument("manifest: unknown key \"" + key + "\"");
            }
        }
        m.format_version = j.value("format_version", 1);
        if (m.format_version != 1) throw std::invalid_argument("manifest: unsupported format_version");
        auto resolve = [&](const std::string& p) {
            std::filesystem::path path(p);
            return path.is_relative() && !base.empty() ? base / path : path;
        };
        m.vocab_path = resolve(j.at("vocab").get<std::string>());
        for (const auto& s : j.at("sessions")) {
            m.sessions.push_back({resolve(s.at("path").get<std::string>()), parse_role(s.at("role").get<std::string>())});
        }
        return m;
    }

    static DatasetManifest load(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) throw std::runtime_error("manifest not found: " + path.string());
        const auto data = read_file(path);
        return from_json(nlohmann::json::parse(data.begin(), data.end()), path.parent_path());
    }

    void save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }
};

}  // namespace mebm
