#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace bgad {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic random stream. Every distribution is realized explicitly on
// top of the raw mt19937_64 output, so draws are bit-identical across
// standard library implementations and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; two raw draws per call, no spare cached
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // unbiased integer in [0, n), n >= 1
    uint64_t below(uint64_t n) {
        uint64_t min = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            uint64_t x = eng_();
            if (x >= min) return x % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // independent derived stream; deterministic in (seed, stream)
    Rng fork(uint64_t stream) const {
        return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
    }

    // digest of the current engine state; does not advance this stream
    uint64_t state_digest() const {
        std::mt19937_64 probe = eng_;
        uint64_t h = 0xCBF29CE484222325ull;
        for (int i = 0; i < 8; ++i) {
            uint64_t v = probe();
            for (int b = 0; b < 8; ++b) {
                h ^= (v >> (8 * b)) & 0xFF;
                h *= 0x100000001B3ull;
            }
        }
        return h;
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace bgad
