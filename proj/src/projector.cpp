#include "falcon/projector.hpp"

#include <cmath>

#include "falcon/errors.hpp"
#include "falcon/rng.hpp"

namespace falcon {

template <typename T>
ProjectorWeights<T> init_projector_weights(std::size_t width, std::size_t llm_width, std::uint64_t seed) {
    if (width == 0 || llm_width == 0) throw ConfigError("projector widths must be >= 1");
    SplitMix64 rng(seed);
    ProjectorWeights<T> w;
    w.w1 = init_uniform<T>({width, llm_width}, width, llm_width, rng);
    w.b1 = Tensor<T>({llm_width});
    w.w2 = init_uniform<T>({llm_width, llm_width}, llm_width, llm_width, rng);
    w.b2 = Tensor<T>({llm_width});
    return w;
}

template <typename T>
Tensor<T> mlp_project(const Tensor<T>& f, const ProjectorWeights<T>& w) {
    if (f.cols() != w.w1.rows()) {
        throw ShapeError("mlp_project: features have width " + std::to_string(f.cols()) + ", projector expects " +
                         std::to_string(w.w1.rows()));
    }
    Tensor<T> h = matmul(f, w.w1);
    add_row_bias(h, w.b1);
    Tensor<T> out = matmul(gelu(h), w.w2);
    add_row_bias(out, w.b2);
    return out;
}

void add_projector_to_archive(TensorArchive& archive, const ProjectorWeights<float>& w) {
    archive.add("projector.w1", w.w1);
    archive.add("projector.b1", w.b1);
    archive.add("projector.w2", w.w2);
    archive.add("projector.b2", w.b2);
}

bool projector_from_archive(const TensorArchive& archive, std::size_t width, ProjectorWeights<float>& out) {
    if (!archive.contains("projector.w1")) return false;
    ProjectorWeights<float> w{archive.get("projector.w1"), archive.get("projector.b1"), archive.get("projector.w2"),
                              archive.get("projector.b2")};
    const std::size_t llm = w.w1.cols();
    if (w.w1.rank() != 2 || w.w1.rows() != width || w.b1.size() != llm || w.w2.dims() != Dims{llm, llm} ||
        w.b2.size() != llm) {
        throw ConfigError("projector weights in archive do not match encoder width " + std::to_string(width));
    }
    out = std::move(w);
    return true;
}

std::string to_string(CompressorKind kind) {
    switch (kind) {
    case CompressorKind::registers: return "registers";
    case CompressorKind::pool: return "pool";
    case CompressorKind::pixel_shuffle: return "pixel_shuffle";
    case CompressorKind::abstractor: return "abstractor";
    }
    return "unknown";
}

CompressorKind parse_compressor_kind(const std::string& name) {
    for (auto k : all_compressor_kinds())
        if (to_string(k) == name) return k;
    throw ConfigError("unknown compressor '" + name + "'");
}

std::vector<CompressorKind> all_compressor_kinds() {
    return {CompressorKind::registers, CompressorKind::pool, CompressorKind::pixel_shuffle, CompressorKind::abstractor};
}

CompressorGeometry compressor_geometry(std::size_t tokens, std::size_t target) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
    const auto out_side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(target))));
    if (side * side != tokens) throw ShapeError("compressor: " + std::to_string(tokens) + " tokens are not a square grid");
    if (out_side * out_side != target || out_side == 0 || side % out_side != 0) {
        throw ShapeError("compressor: cannot reduce a " + std::to_string(side) + "x" + std::to_string(side) +
                         " grid to " + std::to_string(target) + " tokens");
    }
    return CompressorGeometry{side, side / out_side, out_side};
}

template <typename T>
Tensor<T> avg_pool_compress(const Tensor<T>& feats, std::size_t target) {
    const auto g = compressor_geometry(feats.rows(), target);
    const std::size_t d = feats.cols();
    Tensor<T> out({g.target(), d});
    const T inv = T(1) / static_cast<T>(g.factor * g.factor);
    for (std::size_t oy = 0; oy < g.out_side; ++oy) {
        for (std::size_t ox = 0; ox < g.out_side; ++ox) {
            auto dst = out.row(oy * g.out_side + ox);
            for (std::size_t dy = 0; dy < g.factor; ++dy)
                for (std::size_t dx = 0; dx < g.factor; ++dx) {
                    auto src = feats.row((oy * g.factor + dy) * g.side + ox * g.factor + dx);
                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                }
            for (auto& v : dst) v *= inv;
        }
    }
    return out;
}

template <typename T>
Tensor<T> pixel_shuffle_compress(const Tensor<T>& feats, const Tensor<T>& proj, std::size_t target) {
    const auto g = compressor_geometry(feats.rows(), target);
    const std::size_t d = feats.cols();
    const std::size_t depth = g.factor * g.factor * d;
    if (proj.rank() != 2 || proj.rows() != depth) {
        throw ShapeError("pixel_shuffle: projection must have " + std::to_string(depth) + " rows, got " +
                         dims_to_string(proj.dims()));
    }
    Tensor<T> shuffled({g.target(), depth});
    for (std::size_t oy = 0; oy < g.out_side; ++oy) {
        for (std::size_t ox = 0; ox < g.out_side; ++ox) {
            auto dst = shuffled.row(oy * g.out_side + ox);
            for (std::size_t dy = 0; dy < g.factor; ++dy)
                for (std::size_t dx = 0; dx < g.factor; ++dx) {
                    auto src = feats.row((oy * g.factor + dy) * g.side + ox * g.factor + dx);
                    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>((dy * g.factor + dx) * d));
                }
        }
    }
    return matmul(shuffled, proj);
}

template <typename T>
AbstractorWeights<T> init_abstractor_weights(std::size_t width, std::size_t target, std::size_t ffn_mult,
                                             std::uint64_t seed, std::size_t blocks) {
    SplitMix64 rng(seed);
    const std::size_t d = width, f = width * ffn_mult;
    AbstractorWeights<T> w;
    w.queries = init_uniform<T>({target, d}, target, d, rng);
    for (std::size_t b = 0; b < blocks; ++b) {
        AbstractorBlock<T> blk;
        blk.ln_q_gamma = blk.ln_kv_gamma = blk.ln2_gamma = Tensor<T>::filled({d}, T(1));
        blk.ln_q_beta = blk.ln_kv_beta = blk.ln2_beta = Tensor<T>({d});
        blk.wq = init_uniform<T>({d, d}, d, d, rng);
        blk.wk = init_uniform<T>({d, d}, d, d, rng);
        blk.wv = init_uniform<T>({d, d}, d, d, rng);
        blk.wo = init_uniform<T>({d, d}, d, d, rng);
        blk.w1 = init_uniform<T>({d, f}, d, f, rng);
        blk.w2 = init_uniform<T>({f, d}, f, d, rng);
        w.blocks.push_back(std::move(blk));
    }
    return w;
}

template <typename T>
Tensor<T> cross_attention(const Tensor<T>& queries, const Tensor<T>& feats, const AbstractorBlock<T>& b,
                          std::size_t heads, std::vector<Tensor<T>>* head_probs) {
    const std::size_t d = queries.cols();
    if (feats.cols() != d) throw ShapeError("cross_attention: query and feature widths differ");
    if (heads == 0 || d % heads != 0) throw ShapeError("cross_attention: width not divisible by heads");
    const std::size_t dk = d / heads;
    const Tensor<T> qn = layer_norm(queries, b.ln_q_gamma, b.ln_q_beta, T(1e-6));
    const Tensor<T> kvn = layer_norm(feats, b.ln_kv_gamma, b.ln_kv_beta, T(1e-6));
    const Tensor<T> q = matmul(qn, b.wq);
    const Tensor<T> k = matmul(kvn, b.wk);
    const Tensor<T> v = matmul(kvn, b.wv);
    Tensor<T> merged({queries.rows(), d});
    if (head_probs) head_probs->clear();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dk, c1 = c0 + dk;
        Tensor<T> scores = matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1)));
        scale_inplace(scores, T(1) / std::sqrt(static_cast<T>(dk)));
        Tensor<T> probs = softmax_rows(scores);
        set_cols(merged, matmul(probs, slice_cols(v, c0, c1)), c0);
        if (head_probs) head_probs->push_back(std::move(probs));
    }
    return matmul(merged, b.wo);
}

template <typename T>
Tensor<T> abstractor_compress(const Tensor<T>& feats, const AbstractorWeights<T>& w, std::size_t heads) {
    Tensor<T> q = w.queries;
    for (const auto& b : w.blocks) {
        add_inplace(q, cross_attention(q, feats, b, heads));
        const Tensor<T> normed = layer_norm(q, b.ln2_gamma, b.ln2_beta, T(1e-6));
        add_inplace(q, matmul(gelu(matmul(normed, b.w1)), b.w2));
    }
    return q;
}

template <typename T>
std::size_t parameter_count(const AbstractorWeights<T>& w) {
    std::size_t n = w.queries.size();
    for (const auto& b : w.blocks) {
        for (const auto* t : {&b.ln_q_gamma, &b.ln_q_beta, &b.ln_kv_gamma, &b.ln_kv_beta, &b.wq, &b.wk, &b.wv, &b.wo,
                              &b.ln2_gamma, &b.ln2_beta, &b.w1, &b.w2})
            n += t->size();
    }
    return n;
}

#define FALCON_INSTANTIATE(T)                                                                                    \
    template ProjectorWeights<T> init_projector_weights<T>(std::size_t, std::size_t, std::uint64_t);             \
    template Tensor<T> mlp_project(const Tensor<T>&, const ProjectorWeights<T>&);                                \
    template Tensor<T> avg_pool_compress(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> pixel_shuffle_compress(const Tensor<T>&, const Tensor<T>&, std::size_t);                  \
    template AbstractorWeights<T> init_abstractor_weights<T>(std::size_t, std::size_t, std::size_t, std::uint64_t, \
                                                             std::size_t);                                       \
    template Tensor<T> cross_attention(const Tensor<T>&, const Tensor<T>&, const AbstractorBlock<T>&, std::size_t, \
                                       std::vector<Tensor<T>>*);                                                 \
    template Tensor<T> abstractor_compress(const Tensor<T>&, const AbstractorWeights<T>&, std::size_t);          \
    template std::size_t parameter_count(const AbstractorWeights<T>&);

FALCON_INSTANTIATE(float)
FALCON_INSTANTIATE(double)
#undef FALCON_INSTANTIATE

} // namespace falcon
