#include "falcon/encoder.hpp"

#include <cmath>
#include <thread>

#include "falcon/errors.hpp"

namespace falcon {

namespace {

// Runs fn(i) for i in [0, n). Work item i always lands in its own output slot,
// so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) fn(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

template <typename T>
Tensor<T> embed_image_rows(const Image& tile, const EncoderWeights<T>& w, const EncoderConfig& cfg) {
    if (tile.height != cfg.tile || tile.width != cfg.tile) {
        throw ConfigError("tile is " + std::to_string(tile.height) + "x" + std::to_string(tile.width) +
                          ", config expects " + std::to_string(cfg.tile));
    }
    Tensor<T> tokens = patchify(normalize_pixels(tile), cfg.patch).template cast<T>();
    Tensor<T> x = matmul(tokens, w.patch_embed);
    add_inplace(x, w.pos_embed);
    return x;
}

template <typename T>
void check_input_count(std::size_t n, const EncoderConfig& cfg) {
    if (n == 0) throw ConfigError("encode: no input tiles");
    if (n > cfg.max_tiles + 1) {
        throw ConfigError("encode: " + std::to_string(n) + " inputs exceed max_tiles + thumbnail (" +
                          std::to_string(cfg.max_tiles + 1) + ")");
    }
}

} // namespace

template <typename T>
std::vector<TokenStates<T>> embed_tiles(std::span<const Image> tiles, const EncoderWeights<T>& w,
                                        const EncoderConfig& cfg) {
    cfg.validate();
    check_weight_shapes(w, cfg);
    check_input_count<T>(tiles.size(), cfg);
    std::vector<TokenStates<T>> out;
    out.reserve(tiles.size());
    for (const auto& tile : tiles) {
        Tensor<T> image = embed_image_rows(tile, w, cfg);
        out.push_back(TokenStates<T>{concat_rows<T>({image, w.registers}), 0, cfg.image_tokens(), cfg.registers});
    }
    return out;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                               const Tensor<T>& wo, std::size_t heads, std::vector<Tensor<T>>* head_probs) {
    const std::size_t d = x.cols();
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
    const std::size_t dk = d / heads;
    const Tensor<T> q = matmul(x, wq);
    const Tensor<T> k = matmul(x, wk);
    const Tensor<T> v = matmul(x, wv);
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    Tensor<T> merged({x.rows(), d});
    if (head_probs) head_probs->clear();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dk, c1 = c0 + dk;
        Tensor<T> scores = matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1)));
        scale_inplace(scores, scale);
        Tensor<T> probs = softmax_rows(scores);
        set_cols(merged, matmul(probs, slice_cols(v, c0, c1)), c0);
        if (head_probs) head_probs->push_back(std::move(probs));
    }
    return matmul(merged, wo);
}

template <typename T>
TokenStates<T> self_attention_block(const TokenStates<T>& x, const LayerWeights<T>& lw, const EncoderConfig& cfg,
                                    std::vector<Tensor<T>>* head_probs) {
    const Tensor<T> normed = layer_norm(x.hidden, lw.ln1_gamma, lw.ln1_beta, static_cast<T>(cfg.ln_eps));
    TokenStates<T> out = x;
    add_inplace(out.hidden, multi_head_attention(normed, lw.wq, lw.wk, lw.wv, lw.wo, cfg.heads, head_probs));
    return out;
}

template <typename T>
std::vector<TokenStates<T>> reatten(const std::vector<TokenStates<T>>& states, const ReattenWeights<T>& rw,
                                    const EncoderConfig& cfg, bool enabled) {
    if (!enabled || states.empty()) return states;
    const auto& first = states.front();
    for (const auto& s : states) {
        if (s.layer != first.layer) {
            throw StateError("reatten: tiles at different layers (" + std::to_string(first.layer) + " vs " +
                             std::to_string(s.layer) + ")");
        }
        if (s.registers != first.registers || s.image_tokens != first.image_tokens) {
            throw StateError("reatten: tiles disagree on token layout");
        }
    }
    const std::size_t n = first.image_tokens, m = first.registers;
    if (m == 0) return states;

    std::vector<Tensor<T>> blocks;
    blocks.reserve(states.size());
    for (const auto& s : states) blocks.push_back(s.register_rows());
    Tensor<T> stacked = concat_rows(blocks);
    const Tensor<T> normed = layer_norm(stacked, rw.ln_gamma, rw.ln_beta, static_cast<T>(cfg.ln_eps));
    add_inplace(stacked, multi_head_attention(normed, rw.rq, rw.rk, rw.rv, rw.ro, cfg.heads));

    std::vector<TokenStates<T>> out = states;
    const std::size_t d = stacked.cols();
    for (std::size_t k = 0; k < out.size(); ++k) {
        auto src = stacked.data().subspan(k * m * d, m * d);
        std::copy(src.begin(), src.end(), out[k].hidden.data().begin() + static_cast<std::ptrdiff_t>(n * d));
    }
    return out;
}

template <typename T>
TokenStates<T> ffn_block(const TokenStates<T>& x, const LayerWeights<T>& lw, const EncoderConfig& cfg) {
    const Tensor<T> normed = layer_norm(x.hidden, lw.ln2_gamma, lw.ln2_beta, static_cast<T>(cfg.ln_eps));
    TokenStates<T> out = x;
    add_inplace(out.hidden, matmul(gelu(matmul(normed, lw.w1)), lw.w2));
    ++out.layer;
    return out;
}

template <typename T>
EncodeResult<T> encode(std::span<const Image> tiles, const EncoderWeights<T>& w, const EncoderConfig& cfg,
                       const EncodeOptions& opts) {
    std::vector<TokenStates<T>> states = embed_tiles(tiles, w, cfg);
    const std::size_t n_in = states.size();
    const std::size_t n = cfg.image_tokens(), m = cfg.registers;

    EncodeResult<T> result;
    AttentionTrace* trace = nullptr;
    if (opts.record_trace) {
        result.trace.emplace();
        trace = &*result.trace;
        trace->layers = cfg.layers;
        trace->heads = cfg.heads;
        trace->tiles = n_in;
        trace->image_tokens = n;
        trace->registers = m;
        trace->register_to_image.resize(cfg.layers * cfg.heads * n_in);
        if (opts.keep_full_attention) trace->full.resize(cfg.layers * cfg.heads * n_in);
    }

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& lw = w.layers[l];
        parallel_for(n_in, opts.threads, [&](std::size_t k) {
            std::vector<Tensor<T>> probs;
            states[k] = self_attention_block(states[k], lw, cfg, trace ? &probs : nullptr);
            if (!trace) return;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                const std::size_t idx = trace->index(l, h, k);
                TensorD reg({m, n});
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) reg(r, c) = static_cast<double>(probs[h](n + r, c));
                trace->register_to_image[idx] = std::move(reg);
                if (opts.keep_full_attention) trace->full[idx] = probs[h].template cast<double>();
            }
        });
        // Barrier: every tile has finished self-attention for layer l.
        states = reatten(states, w.reatten[l], cfg, cfg.reatten_enabled);
        parallel_for(n_in, opts.threads, [&](std::size_t k) { states[k] = ffn_block(states[k], lw, cfg); });
    }

    std::vector<Tensor<T>> outputs;
    outputs.reserve(n_in);
    for (const auto& s : states) outputs.push_back(s.register_rows());
    result.f_hr = concat_rows(outputs);
    return result;
}

template <typename T>
std::vector<Tensor<T>> encode_image_tokens(std::span<const Image> tiles, const EncoderWeights<T>& w,
                                           const EncoderConfig& cfg, std::size_t threads) {
    cfg.validate();
    check_weight_shapes(w, cfg);
    check_input_count<T>(tiles.size(), cfg);
    std::vector<Tensor<T>> out(tiles.size());
    parallel_for(tiles.size(), threads, [&](std::size_t k) {
        TokenStates<T> s{embed_image_rows(tiles[k], w, cfg), 0, cfg.image_tokens(), 0};
        for (const auto& lw : w.layers) s = ffn_block(self_attention_block(s, lw, cfg), lw, cfg);
        out[k] = std::move(s.hidden);
    });
    return out;
}

TensorD extract_register_attention(const AttentionTrace& trace, std::size_t layer, std::size_t head,
                                   std::size_t register_idx, const CropPlan& plan) {
    if (layer >= trace.layers) throw BoundsError("layer " + std::to_string(layer) + " out of range");
    if (head >= trace.heads) throw BoundsError("head " + std::to_string(head) + " out of range");
    if (register_idx >= trace.registers) throw BoundsError("register " + std::to_string(register_idx) + " out of range");
    if (plan.n_tiles > trace.tiles) throw BoundsError("crop plan has more tiles than the trace");
    const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(trace.image_tokens))));
    if (g * g != trace.image_tokens) throw ShapeError("trace image tokens do not form a square grid");

    TensorD heat({plan.rows * g, plan.cols * g});
    for (std::size_t k = 0; k < plan.n_tiles; ++k) {
        const std::size_t gr = k / plan.cols, gc = k % plan.cols;
        auto row = trace.reg_to_image(layer, head, k).row(register_idx);
        for (std::size_t i = 0; i < trace.image_tokens; ++i) heat(gr * g + i / g, gc * g + i % g) = row[i];
    }
    return heat;
}

#define FALCON_INSTANTIATE(T)                                                                                      \
    template std::vector<TokenStates<T>> embed_tiles(std::span<const Image>, const EncoderWeights<T>&,             \
                                                     const EncoderConfig&);                                        \
    template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                            const Tensor<T>&, std::size_t, std::vector<Tensor<T>>*);               \
    template TokenStates<T> self_attention_block(const TokenStates<T>&, const LayerWeights<T>&,                    \
                                                 const EncoderConfig&, std::vector<Tensor<T>>*);                   \
    template std::vector<TokenStates<T>> reatten(const std::vector<TokenStates<T>>&, const ReattenWeights<T>&,     \
                                                 const EncoderConfig&, bool);                                      \
    template TokenStates<T> ffn_block(const TokenStates<T>&, const LayerWeights<T>&, const EncoderConfig&);        \
    template EncodeResult<T> encode(std::span<const Image>, const EncoderWeights<T>&, const EncoderConfig&,        \
                                    const EncodeOptions&);                                                         \
    template std::vector<Tensor<T>> encode_image_tokens(std::span<const Image>, const EncoderWeights<T>&,          \
                                                        const EncoderConfig&, std::size_t);

FALCON_INSTANTIATE(float)
FALCON_INSTANTIATE(double)
#undef FALCON_INSTANTIATE

} // namespace falcon
