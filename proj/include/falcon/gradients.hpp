#pragma once

#include <span>

#include "falcon/config.hpp"
#include "falcon/image.hpp"
#include "falcon/weights.hpp"

namespace falcon {

struct EncoderGradients {
    double loss = 0;                // sum of every F_hr entry
    EncoderWeights<double> grads;   // d loss / d param, same layout as the weights
};

/// Reverse-mode gradients of loss = sum(F_hr) for every trainable tensor.
/// Mirrors encode() on the autodiff tape in 64-bit precision.
EncoderGradients encoder_loss_gradients(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                        const EncoderConfig& cfg);

} // namespace falcon
