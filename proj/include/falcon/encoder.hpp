#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "falcon/config.hpp"
#include "falcon/image.hpp"
#include "falcon/tensor.hpp"
#include "falcon/weights.hpp"

namespace falcon {

/// Hidden states of one tile at a given layer. Rows [0, image_tokens) hold
/// image tokens, rows [image_tokens, image_tokens + registers) the registers.
template <typename T>
struct TokenStates {
    Tensor<T> hidden;
    std::size_t layer = 0;
    std::size_t image_tokens = 0;
    std::size_t registers = 0;

    Tensor<T> register_rows() const { return slice_rows(hidden, image_tokens, image_tokens + registers); }
};

/// Attention probabilities captured during encode, indexed by
/// (layer, head, tile). Stored in double regardless of working precision.
struct AttentionTrace {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t tiles = 0;
    std::size_t image_tokens = 0;
    std::size_t registers = 0;
    std::vector<TensorD> register_to_image;  // each registers x image_tokens
    std::vector<TensorD> full;               // each (N+M) x (N+M); empty unless requested

    std::size_t index(std::size_t layer, std::size_t head, std::size_t tile) const {
        return (layer * heads + head) * tiles + tile;
    }
    const TensorD& reg_to_image(std::size_t layer, std::size_t head, std::size_t tile) const {
        return register_to_image.at(index(layer, head, tile));
    }
};

struct EncodeOptions {
    std::size_t threads = 1;
    bool record_trace = false;
    bool keep_full_attention = false;
};

template <typename T>
struct EncodeResult {
    Tensor<T> f_hr;  // registers * n_inputs rows, input order (thumbnail last)
    std::optional<AttentionTrace> trace;
};

/// Layer-0 states: patch embedding plus position embedding for image rows,
/// then a copy of the shared registers.
template <typename T>
std::vector<TokenStates<T>> embed_tiles(std::span<const Image> tiles, const EncoderWeights<T>& w,
                                        const EncoderConfig& cfg);

/// Projected multi-head self-attention over all rows of x (no mask). When
/// head_probs is non-null it receives one probability matrix per head.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                               const Tensor<T>& wo, std::size_t heads, std::vector<Tensor<T>>* head_probs = nullptr);

/// x + MHA(ln1(x)) over image tokens and registers jointly.
template <typename T>
TokenStates<T> self_attention_block(const TokenStates<T>& x, const LayerWeights<T>& lw, const EncoderConfig& cfg,
                                    std::vector<Tensor<T>>* head_probs = nullptr);

/// Register exchange across tiles. Register rows of every tile are stacked in
/// tile order, updated with a residual pre-norm self-attention, and scattered
/// back. Image rows are not touched. Identity when disabled.
template <typename T>
std::vector<TokenStates<T>> reatten(const std::vector<TokenStates<T>>& states, const ReattenWeights<T>& rw,
                                    const EncoderConfig& cfg, bool enabled);

/// x + gelu(ln2(x) W1) W2 per row; advances the layer index.
template <typename T>
TokenStates<T> ffn_block(const TokenStates<T>& x, const LayerWeights<T>& lw, const EncoderConfig& cfg);

/// Full register encoder. Returns only the register outputs of every input
/// tile, concatenated in input order.
template <typename T>
EncodeResult<T> encode(std::span<const Image> tiles, const EncoderWeights<T>& w, const EncoderConfig& cfg,
                       const EncodeOptions& opts = {});

/// Register-free ViT run (no registers, no exchange). Returns the final
/// image-token states of each tile; input for the compression baselines.
template <typename T>
std::vector<Tensor<T>> encode_image_tokens(std::span<const Image> tiles, const EncoderWeights<T>& w,
                                           const EncoderConfig& cfg, std::size_t threads = 1);

/// Attention that one register pays to the image tokens, stitched over the
/// crop grid. Thumbnail excluded. Shape (rows * g) x (cols * g), g = tile/patch.
TensorD extract_register_attention(const AttentionTrace& trace, std::size_t layer, std::size_t head,
                                   std::size_t register_idx, const CropPlan& plan);

} // namespace falcon
