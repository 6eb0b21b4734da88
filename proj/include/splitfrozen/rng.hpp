#pragma once

// Pinned deterministic PRNG stack. Every piece of randomness in the project
// (weight init, Dirichlet draws, shuffles) flows through this generator so
// that golden values survive refactors and port cleanly to other languages.
//
// Algorithms (see docs/formats.md for the normative description):
//   state seeding   splitmix64            (Steele, Lea, Flood 2014)
//   generator       xoshiro256**          (Blackman, Vigna 2018)
//   bounded ints    multiply-shift        (Lemire 2019), high 64 bits of x*n
//   unit doubles    (x >> 11) * 2^-53
//   gaussians       Box-Muller on (0,1] uniforms, cos branch first
//   shuffles        Fisher-Yates, descending index

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace splitfrozen {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97f4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
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

    // Uniform in [0, bound) without modulo bias: high word of the 128-bit
    // product, so results are reproducible from the raw u64 stream.
    std::uint64_t next_below(std::uint64_t bound) {
        const auto wide = static_cast<unsigned __int128>(next_u64()) * bound;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    // Uniform in [0, 1): 53 mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]; used where log() must not see zero.
    double next_double_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal, Box-Muller. Consumes two uniforms per pair and caches
    // the sine branch, so the draw count is deterministic.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_double_open();
        const double u2 = next_double_open();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stable seed derivation for substreams (per round, per device, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base ^ (0xA0761D6478BD642FULL + stream * 0xE7037ED1A0B428DBULL);
    return splitmix64(s);
}

}  // namespace splitfrozen
