#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "falcon/archive.hpp"
#include "falcon/config.hpp"
#include "falcon/tensor.hpp"

namespace falcon {

template <typename T>
struct LayerWeights {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> wq, wk, wv, wo;  // D x D, applied as x * W
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> w1;              // D x ffn_width
    Tensor<T> w2;              // ffn_width x D
};

/// Cross-tile register attention parameters for one layer.
template <typename T>
struct ReattenWeights {
    Tensor<T> ln_gamma, ln_beta;
    Tensor<T> rq, rk, rv, ro;
};

template <typename T>
struct EncoderWeights {
    Tensor<T> patch_embed;  // (3 p^2) x D
    Tensor<T> pos_embed;    // N x D
    Tensor<T> registers;    // M x D, one copy shared by every tile
    std::vector<LayerWeights<T>> layers;
    std::vector<ReattenWeights<T>> reatten;

    template <typename U>
    EncoderWeights<U> cast() const;
};

/// Visits every trainable tensor with its canonical archive name. The visit
/// order is canonical: embeddings, registers, the ViT layers, then the
/// ReAtten layers. Initialisation draws follow this order.
template <typename W, typename Fn>
void for_each_param(W& w, Fn&& fn) {
    fn(std::string("patch_embed"), w.patch_embed);
    fn(std::string("pos_embed"), w.pos_embed);
    fn(std::string("registers"), w.registers);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& L = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        fn(p + "ln1.gamma", L.ln1_gamma);
        fn(p + "ln1.beta", L.ln1_beta);
        fn(p + "wq", L.wq);
        fn(p + "wk", L.wk);
        fn(p + "wv", L.wv);
        fn(p + "wo", L.wo);
        fn(p + "ln2.gamma", L.ln2_gamma);
        fn(p + "ln2.beta", L.ln2_beta);
        fn(p + "w1", L.w1);
        fn(p + "w2", L.w2);
    }
    for (std::size_t l = 0; l < w.reatten.size(); ++l) {
        auto& R = w.reatten[l];
        const std::string p = "reatten." + std::to_string(l) + ".";
        fn(p + "ln.gamma", R.ln_gamma);
        fn(p + "ln.beta", R.ln_beta);
        fn(p + "rq", R.rq);
        fn(p + "rk", R.rk);
        fn(p + "rv", R.rv);
        fn(p + "ro", R.ro);
    }
}

/// Zero-filled weights with every tensor shaped for cfg.
template <typename T>
EncoderWeights<T> zero_weights(const EncoderConfig& cfg);

/// Seeded init in canonical order: layer-norm gammas are 1, betas 0, every
/// other tensor is drawn with init_uniform(fan_in = rows, fan_out = cols).
template <typename T>
EncoderWeights<T> init_encoder_weights(const EncoderConfig& cfg, std::uint64_t seed);

/// Copies each layer's (Wq, Wk, Wv, Wo, ln1) into its ReAtten slot.
template <typename T>
EncoderWeights<T> init_reatten_from_vit(const EncoderWeights<T>& w);

/// Throws ConfigError if any tensor is missing or mis-shaped for cfg.
template <typename T>
void check_weight_shapes(const EncoderWeights<T>& w, const EncoderConfig& cfg);

template <typename T>
TensorArchive weights_to_archive(const EncoderWeights<T>& w);

/// Entries under the "projector." prefix are ignored; any other unknown or
/// mis-shaped entry is a ConfigError.
template <typename T>
EncoderWeights<T> weights_from_archive(const TensorArchive& archive, const EncoderConfig& cfg);

template <typename T>
std::size_t parameter_count(const EncoderWeights<T>& w);

} // namespace falcon
