#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace disagg {

/// Seedable random stream. All randomness in the library flows through an
/// explicit Rng instance; there is no ambient global generator. Uniform and
/// normal draws are derived from the raw 64-bit stream directly so that the
/// sequence does not depend on the standard library's distribution internals.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Standard normal via Box-Muller (one value per call, no cached state).
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    /// Unbiased integer in [0, bound) by rejection.
    uint64_t below(uint64_t bound) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % bound;
    }

    /// Fisher-Yates shuffle with the stream above (stable across platforms).
    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace disagg
