#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace crowddiff {

// splitmix64: cheap stateless mixing, used to derive independent seeds
// for (purpose, index) pairs from one master seed.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed, uint64_t stream = 0) { return Rng(mix_seed(seed, stream)); }

inline float normal_sample(Rng& rng) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    return d(rng);
}

}  // namespace crowddiff
