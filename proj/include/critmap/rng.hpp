#pragma once

#include <cstdint>
#include <string_view>

#include "critmap/tensor.hpp"

namespace critmap {

/// splitmix64 output finalizer.
constexpr std::uint64_t fmix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and a stream label:
///   mix(a, b) = fmix64(a ^ fmix64(b + 0x9E3779B97F4A7C15))
/// Not commutative, so mix(mix(s, x), y) and mix(mix(s, y), x) are distinct streams.
constexpr std::uint64_t mix(std::uint64_t parent, std::uint64_t label) noexcept {
    return fmix64(parent ^ fmix64(label + 0x9E3779B97F4A7C15ULL));
}

/// FNV-1a over the bytes of text, then fmix64.
constexpr std::uint64_t hash64(std::string_view text) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return fmix64(h);
}

struct NormalDist {
    double mean = 0.0;
    double stddev = 1.0;
};

struct UniformDist {
    double low = 0.0;
    double high = 1.0;
};

/// splitmix64 generator.
///
///   state += 0x9E3779B97F4A7C15; return fmix64(state)
///
/// uniform(): top 53 bits scaled by 2^-53, giving [0, 1).
/// normal(): Box-Muller, always consuming two uniforms u1 then u2 and returning
///   sqrt(-2 ln(1 - u1)) * cos(2 pi u2). The sine branch is discarded so every
///   normal costs exactly two draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return fmix64(state_);
    }

    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double low, double high) noexcept { return low + (high - low) * uniform(); }
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Uniform integer in [0, bound) by multiply-shift over 64 random bits.
    std::uint64_t below(std::uint64_t bound) noexcept;

    Rng child(std::uint64_t label) const noexcept { return Rng(mix(state_, label)); }
    Rng child(std::string_view label) const noexcept { return child(hash64(label)); }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

Tensor rng_draw(Rng& rng, const NormalDist& dist, std::int64_t n, DType dtype = DType::f32);
Tensor rng_draw(Rng& rng, const UniformDist& dist, std::int64_t n, DType dtype = DType::f32);

}  // namespace critmap
