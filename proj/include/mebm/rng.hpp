#pragma once

// Seeded randomness shared by every module.
//
// All streams derive from one 64-bit seed. A named stream is seeded with
// seed ^ fnv1a64(name) and expanded through splitmix64 into xoshiro256**
// state, so sequences are identical on every platform. The distributions
// below are written out explicitly instead of using <random> distributions,
// whose output is implementation-defined.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace mebm {

constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stateless mix of several words; used for counter-based randomness.
constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) noexcept {
    std::uint64_t s = a;
    std::uint64_t h = splitmix64(s);
    s = h ^ b;
    h = splitmix64(s);
    s = h ^ c;
    h = splitmix64(s);
    s = h ^ d;
    return splitmix64(s);
}

/// Maps 64 random bits to a double in [0, 1) using the top 53 bits.
constexpr double unit_double(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// xoshiro256** generator.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64(sm);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    double uniform() noexcept { return unit_double((*this)()); }

    /// Unbiased integer in [lo, hi] (inclusive) by rejection sampling.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) {
            throw std::invalid_argument("uniform_int: empty range");
        }
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) {
            return static_cast<std::int64_t>((*this)());
        }
        const std::uint64_t limit = max() - max() % span;
        std::uint64_t draw;
        do {
            draw = (*this)();
        } while (draw >= limit);
        return lo + static_cast<std::int64_t>(draw % span);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    const std::array<std::uint64_t, 4>& state() const noexcept { return state_; }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stream keyed by (seed, name, up to three indices).
inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t i0 = 0,
                       std::uint64_t i1 = 0, std::uint64_t i2 = 0) {
    return Rng(mix64(seed ^ fnv1a64(name), i0, i1, i2));
}

}  // namespace mebm
