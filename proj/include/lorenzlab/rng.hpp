#ifndef LORENZLAB_RNG_HPP
#define LORENZLAB_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace lorenzlab {

/// Deterministic seed derivation: every concurrent task gets its own
/// stream whose seed is a pure function of the master seed and a path
/// of labels, so results never depend on execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t part) {
    return splitmix64(seed ^ splitmix64(part));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix_seed(seed, h);
}

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, Parts... parts) {
    ((seed = mix_seed(seed, parts)), ...);
    return seed;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

/// Uniform double in [0, 1) with 53 random bits. Used instead of
/// std::uniform_real_distribution so the draw sequence is fixed by the
/// engine alone, independent of standard-library internals.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace lorenzlab

#endif
