#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace exposure {

// Seeded random source. Distributions are derived from raw engine bits so
// that sequences are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        // Rejection sampling avoids modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Draws an index according to the (normalized) probability vector.
    std::size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] > 0.0) last_positive = i;
            acc += probs[i];
            if (u < acc) return i;
        }
        return last_positive;
    }

    Rng split() { return Rng(engine_()); }

private:
    std::mt19937_64 engine_;
};

}  // namespace exposure
