#pragma once
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mpseg {

// splitmix64 finalizer; also used as the key-mixing function for derived
// streams.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent substream seed from a base seed plus up to three
// integer keys (view index, slice index, pixel id, ...). Pure function, so
// parallel callers get identical streams regardless of scheduling.
[[nodiscard]] constexpr std::uint64_t stream_seed(std::uint64_t seed,
                                                  std::uint64_t k0 = 0,
                                                  std::uint64_t k1 = 0,
                                                  std::uint64_t k2 = 0) noexcept {
    std::uint64_t h = mix64(seed ^ 0x8f3c0ddeadbeef01ULL);
    h = mix64(h ^ k0);
    h = mix64(h ^ k1);
    h = mix64(h ^ k2);
    return h;
}

// Deterministic 64-bit PRNG (splitmix64 stream). Not cryptographic; chosen
// so streams are reproducible bit-for-bit across runs and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) noexcept {
        // Lemire multiply-shift; bias is O(n / 2^64), irrelevant here.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; second value of each pair is cached.
    double gaussian() noexcept {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * std::numbers::pi * u2;
        cached_ = radius * std::sin(angle);
        has_cached_ = true;
        return radius * std::cos(angle);
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace mpseg
