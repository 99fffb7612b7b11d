#pragma once

#include <cstdint>

#include "falcon/tensor.hpp"

namespace falcon {

/// SplitMix64. Identical seed and call sequence give identical output on
/// every platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) from the top 53 bits.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

/// Glorot-style uniform init in [-a, a), a = sqrt(6 / (fan_in + fan_out)).
/// Draws are taken in flat row-major order.
template <typename T>
Tensor<T> init_uniform(const Dims& dims, std::size_t fan_in, std::size_t fan_out, SplitMix64& rng);

} // namespace falcon
