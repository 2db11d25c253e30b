#ifndef MLCAP_RNG_HPP
#define MLCAP_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace mlcap {

// FNV-1a, used for stable string hashing (scene-id splits, RNG purposes).
// std::hash is not stable across implementations.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// One independent stream per (seed, purpose, index). All randomness in the
// project is routed through here so that runs are reproducible and stages
// can be resumed without replaying earlier draws.
inline std::mt19937_64 make_rng(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
    uint64_t s = mix64(seed ^ mix64(fnv1a(purpose)) ^ mix64(index * 0x9e3779b97f4a7c15ull + 1));
    return std::mt19937_64(s);
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline int uniform_int(std::mt19937_64& g, int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(g);
}

inline double gaussian(std::mt19937_64& g, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(g);
}

}  // namespace mlcap

#endif
