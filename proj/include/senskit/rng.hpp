// Deterministic random sampling helpers. All stochastic choices in the
// toolkit (k-means seeding, restarts, bootstrap resamples, fixtures) go
// through these so results are identical across platforms: the standard
// distributions are implementation-defined, the raw mt19937_64 stream is not.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace senskit {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent stream for the i-th sub-task of a seeded computation.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 1));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; n must be > 0.
inline std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do { v = rng(); } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

// Standard normal via Box-Muller (fresh pair each call, second value unused).
inline double normal01(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 == 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Index drawn with probability weights[i] / sum(weights); weights >= 0 with a
// positive total. CDF walk keeps ties deterministic.
inline std::size_t weighted_pick(std::mt19937_64& rng, const std::vector<double>& weights,
                                 double total) {
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (target < acc) return i;
    }
    // Rounding pushed us past the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

}  // namespace senskit
