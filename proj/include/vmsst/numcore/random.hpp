#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vmsst::num {

// All randomness in the project flows from seeded instances of this engine.
using Rng = std::mt19937_64;

// SplitMix64 finalizer; derives independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <typename Real>
std::vector<Real> standard_normal(Rng& rng, std::size_t count) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Real> out(count);
    for (auto& x : out) {
        x = static_cast<Real>(normal(rng));
    }
    return out;
}

}  // namespace vmsst::num
