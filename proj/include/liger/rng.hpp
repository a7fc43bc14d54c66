// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace liger {

/// Counter-based SplitMix64 generator. Sample i of a stream is a pure function
/// of (seed, i), so streams are reproducible across runs and platforms, and
/// `split` derives independent child streams without sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix(seed_ + counter_ * kGamma);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    /// Standard normal via Box-Muller; consumes two draws per sample.
    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Independent child stream keyed by `stream`.
    Rng split(std::uint64_t stream) const noexcept {
        return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ULL)));
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

} // namespace liger
