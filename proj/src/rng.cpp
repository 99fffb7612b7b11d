#include "falcon/rng.hpp"

#include <cmath>

namespace falcon {

template <typename T>
Tensor<T> init_uniform(const Dims& dims, std::size_t fan_in, std::size_t fan_out, SplitMix64& rng) {
    if (fan_in == 0 || fan_out == 0) throw ShapeError("init_uniform: fan_in and fan_out must be >= 1");
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(dims);
    for (auto& v : t.data()) v = static_cast<T>(-a + 2.0 * a * rng.next_unit());
    return t;
}

template TensorF init_uniform<float>(const Dims&, std::size_t, std::size_t, SplitMix64&);
template TensorD init_uniform<double>(const Dims&, std::size_t, std::size_t, SplitMix64&);

} // namespace falcon
