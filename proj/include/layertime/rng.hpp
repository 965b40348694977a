/// Seeded random number generation with an output stream that is fully
/// determined by the seed on every platform. The engine is std::mt19937_64
/// (bit-exact by the standard); the uniform mappings are implemented here
/// instead of relying on std::uniform_*_distribution, whose output is
/// implementation-defined.

#ifndef LAYERTIME_RNG_HPP
#define LAYERTIME_RNG_HPP

#include <cstdint>
#include <random>

namespace layertime {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 bits of mantissa.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [0, n), unbiased via rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace layertime

#endif // LAYERTIME_RNG_HPP
