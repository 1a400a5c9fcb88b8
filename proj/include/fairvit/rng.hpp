#pragma once

#include <cmath>
#include <cstdint>

namespace fairvit {

// Deterministic, platform-independent PRNG (splitmix64 core). The standard
// library distributions are implementation-defined, so everything that must
// reproduce bit-for-bit goes through this.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (always consumes two draws)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    bool bernoulli(double p) { return uniform() < p; }

private:
    uint64_t state_;
};

// Derives an independent stream from (seed, tags). Used to give each epoch /
// purpose its own deterministic RNG so training can resume mid-run.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
    h ^= a + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ULL;
    h ^= b + 0x94D049BB133111EBULL + (h << 6) + (h >> 2);
    h *= 0x94D049BB133111EBULL;
    return h ^ (h >> 29);
}

}  // namespace fairvit
