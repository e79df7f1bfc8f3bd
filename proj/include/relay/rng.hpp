#pragma once

#include <cmath>
#include <cstdint>

namespace relay {

/// SplitMix64 (Steele, Lea, Flood 2014). Bit-exact on every platform, which
/// std:: distributions are not, so all seeded randomness goes through here.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return n == 0 ? 0 : static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

    double exponential(double mean) { return -mean * std::log1p(-uniform()); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
};

/// Derives an independent stream seed from (seed, index) pairs so that each
/// simulated request draws from its own generator regardless of event order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 mix(seed ^ (index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
    mix.next();
    return mix.next();
}

}  // namespace relay
