#pragma once

// Named, independent random streams derived from one root seed.
//
// Every consumer of randomness (initialisation, partitioning, noise, client
// sampling, shuffling, ...) asks for its own stream keyed by a name and up to
// two integer coordinates, e.g. stream(seed, "shuffle", round, client). Streams
// never share state, so enabling one feature cannot shift the random sequence
// seen by another.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedss {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t root_seed, std::string_view name,
                     std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = splitmix64(root_seed ^ fnv1a64(name));
    s = splitmix64(s ^ splitmix64(a + 0x1234567ULL));
    s = splitmix64(s ^ splitmix64(b + 0x7654321ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return Engine(seq);
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Engine& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform_real(Engine& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// First `count` entries of a uniformly random permutation of 0..n-1
/// (partial Fisher-Yates). count is clamped to n.
inline std::vector<std::size_t> sample_without_replacement(Engine& rng, std::size_t n,
                                                           std::size_t count) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    count = std::min(count, n);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + uniform_index(rng, n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

inline std::vector<std::size_t> permutation(Engine& rng, std::size_t n) {
    return sample_without_replacement(rng, n, n);
}

}  // namespace fedss
