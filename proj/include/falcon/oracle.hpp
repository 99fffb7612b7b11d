#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "falcon/config.hpp"
#include "falcon/image.hpp"
#include "falcon/projector.hpp"
#include "falcon/tensor.hpp"
#include "falcon/weights.hpp"

// Deliberately naive reference implementations. Nothing in this module calls
// the optimized kernels in tensor.cpp, encoder.cpp or projector.cpp; the
// reference code keeps its own loops so the two paths can check each other.

namespace falcon::oracle {

/// Multiply-add counters filled by the instrumented reference code.
struct FlopCounter {
    std::uint64_t self_attention = 0;
    std::uint64_t reatten = 0;
    std::uint64_t ffn = 0;
    std::uint64_t projector = 0;
    std::uint64_t compressor = 0;
};

struct FlopReport {
    std::uint64_t self_attention = 0;
    std::uint64_t reatten = 0;
    std::uint64_t ffn = 0;
    std::uint64_t projector = 0;
    std::uint64_t total = 0;
    std::uint64_t tokens_in = 0;   // image tokens entering the encoder
    std::uint64_t tokens_out = 0;  // register tokens leaving it
};

/// 4 t D^2 + 2 t^2 D multiply-adds for projected self-attention over t rows.
std::uint64_t attention_flops(std::uint64_t rows, std::uint64_t width);
/// 2 * ffn_mult * t * D^2.
std::uint64_t ffn_flops(std::uint64_t rows, std::uint64_t width, std::uint64_t ffn_mult);

/// Closed-form encoder cost. Inputs are n_tiles grid tiles plus the thumbnail
/// when requested. Self-attention and FFN run per input over N + M rows;
/// ReAtten runs once per layer over M * inputs rows when enabled.
/// llm_width = 0 leaves out the projector.
FlopReport count_flops(const EncoderConfig& cfg, std::size_t n_tiles, bool thumbnail, std::size_t llm_width = 0);

/// Per-tile cost of a compression strategy. For registers this is the extra
/// encoder work the M register rows cause (ReAtten excluded, see
/// reatten_flops_per_tile).
std::uint64_t compressor_flops_per_tile(CompressorKind kind, const EncoderConfig& cfg,
                                        std::size_t target = kTargetTokens);
/// ReAtten cost amortised over the inputs; 0 when disabled.
std::uint64_t reatten_flops_per_tile(const EncoderConfig& cfg, std::size_t n_tiles, bool thumbnail);
std::uint64_t compressor_parameter_count(CompressorKind kind, const EncoderConfig& cfg,
                                         std::size_t target = kTargetTokens);

/// Single-head softmax(q k^T / sqrt(d)) v with plain nested loops.
TensorD brute_force_attention(const TensorD& q, const TensorD& k, const TensorD& v);

/// Largest n_inputs * (N + M) the reference forward accepts.
inline constexpr std::size_t kReferenceTokenCap = 512;

/// Loop-based forward of the full register encoder. Throws RefusalError above
/// kReferenceTokenCap.
TensorD encode_reference(std::span<const Image> tiles, const EncoderWeights<double>& w, const EncoderConfig& cfg,
                         FlopCounter* counter = nullptr);

/// Register-free loop forward; final image-token states per tile.
std::vector<TensorD> encode_image_tokens_reference(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                                   const EncoderConfig& cfg, FlopCounter* counter = nullptr);

TensorD project_reference(const TensorD& f, const ProjectorWeights<double>& w, FlopCounter* counter = nullptr);
TensorD avg_pool_reference(const TensorD& feats, std::size_t target, FlopCounter* counter = nullptr);
TensorD pixel_shuffle_reference(const TensorD& feats, const TensorD& proj, std::size_t target,
                                FlopCounter* counter = nullptr);
TensorD abstractor_reference(const TensorD& feats, const AbstractorWeights<double>& w, std::size_t heads,
                             FlopCounter* counter = nullptr);

/// Central differences: (loss(p + h e_i) - loss(p - h e_i)) / 2h for every i.
/// Throws NumericError on a non-finite loss.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double h);

struct GradEntry {
    std::string name;
    std::size_t size = 0;
    double max_rel_err = 0;  // max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)
    double max_abs_err = 0;
    bool pass = false;
};

struct GradReport {
    double step = 0;
    double tolerance = 0;
    std::vector<GradEntry> entries;

    bool pass() const;
};

/// Compares reverse-mode gradients of sum(F_hr) with central differences of
/// the 64-bit encode() for every trainable tensor.
GradReport check_encoder_gradients(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                   const EncoderConfig& cfg, double step = 1e-5, double tolerance = 1e-4);

} // namespace falcon::oracle
