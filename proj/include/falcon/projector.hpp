#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "falcon/archive.hpp"
#include "falcon/tensor.hpp"

namespace falcon {

/// Two-layer GeLU MLP mapping encoder width D to the language-model width.
template <typename T>
struct ProjectorWeights {
    Tensor<T> w1;  // D x D_llm
    Tensor<T> b1;  // D_llm
    Tensor<T> w2;  // D_llm x D_llm
    Tensor<T> b2;  // D_llm
};

inline constexpr std::size_t kDefaultLlmWidth = 128;

template <typename T>
ProjectorWeights<T> init_projector_weights(std::size_t width, std::size_t llm_width, std::uint64_t seed);

/// Row-wise gelu(f W1 + b1) W2 + b2.
template <typename T>
Tensor<T> mlp_project(const Tensor<T>& f, const ProjectorWeights<T>& w);

void add_projector_to_archive(TensorArchive& archive, const ProjectorWeights<float>& w);
/// Reads "projector.*" entries; returns false when the archive has none.
bool projector_from_archive(const TensorArchive& archive, std::size_t width, ProjectorWeights<float>& out);

enum class CompressorKind { registers, pool, pixel_shuffle, abstractor };

std::string to_string(CompressorKind kind);
/// Throws ConfigError for unknown names.
CompressorKind parse_compressor_kind(const std::string& name);
std::vector<CompressorKind> all_compressor_kinds();

/// Token grid geometry shared by the pooling-style baselines: a square
/// side x side grid reduced by `factor` in each direction to `target` tokens.
struct CompressorGeometry {
    std::size_t side = 0;
    std::size_t factor = 0;
    std::size_t out_side = 0;

    std::size_t target() const { return out_side * out_side; }
};

inline constexpr std::size_t kTargetTokens = 64;

/// Throws ShapeError unless tokens is a square whose side is a multiple of
/// sqrt(target).
CompressorGeometry compressor_geometry(std::size_t tokens, std::size_t target = kTargetTokens);

/// factor x factor average pooling with stride factor over the token grid.
template <typename T>
Tensor<T> avg_pool_compress(const Tensor<T>& feats, std::size_t target = kTargetTokens);

/// Space-to-depth by factor (neighbourhood in raster order, each neighbour a
/// D-wide block), then a (factor^2 D) x D projection.
template <typename T>
Tensor<T> pixel_shuffle_compress(const Tensor<T>& feats, const Tensor<T>& proj, std::size_t target = kTargetTokens);

template <typename T>
struct AbstractorBlock {
    Tensor<T> ln_q_gamma, ln_q_beta;
    Tensor<T> ln_kv_gamma, ln_kv_beta;
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> w1, w2;
};

template <typename T>
struct AbstractorWeights {
    Tensor<T> queries;  // target x D
    std::vector<AbstractorBlock<T>> blocks;
};

inline constexpr std::size_t kAbstractorBlocks = 2;

template <typename T>
AbstractorWeights<T> init_abstractor_weights(std::size_t width, std::size_t target, std::size_t ffn_mult,
                                             std::uint64_t seed, std::size_t blocks = kAbstractorBlocks);

/// Pre-norm multi-head cross-attention of queries over feats, without the
/// residual. head_probs receives one queries x feats matrix per head.
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& queries, const Tensor<T>& feats, const AbstractorBlock<T>& b,
                          std::size_t heads, std::vector<Tensor<T>>* head_probs = nullptr);

/// Learnable queries attend to the image features through every block:
/// q += xattn(q, feats); q += ffn(ln2(q)).
template <typename T>
Tensor<T> abstractor_compress(const Tensor<T>& feats, const AbstractorWeights<T>& w, std::size_t heads);

template <typename T>
std::size_t parameter_count(const AbstractorWeights<T>& w);

} // namespace falcon
