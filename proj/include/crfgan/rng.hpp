#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace crfgan {

// mt19937_64 wrapped with our own sample transforms so that draws are
// reproducible independent of the standard library's distribution
// implementations, and so the full state serializes as plain text.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection sampling keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller without the cached spare, so state is exactly the engine.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace crfgan
