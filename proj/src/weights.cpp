#include "falcon/weights.hpp"

#include "falcon/errors.hpp"
#include "falcon/rng.hpp"

namespace falcon {

template <typename T>
template <typename U>
EncoderWeights<U> EncoderWeights<T>::cast() const {
    EncoderWeights<U> out;
    out.layers.resize(layers.size());
    out.reatten.resize(reatten.size());
    // Both visits run in the same canonical order.
    std::vector<const Tensor<T>*> src;
    for_each_param(*this, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    for_each_param(out, [&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
}

template <typename T>
EncoderWeights<T> zero_weights(const EncoderConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.width, f = cfg.ffn_width();
    EncoderWeights<T> w;
    w.patch_embed = Tensor<T>({cfg.patch_dim(), d});
    w.pos_embed = Tensor<T>({cfg.image_tokens(), d});
    w.registers = Tensor<T>({cfg.registers, d});
    w.layers.resize(cfg.layers);
    for (auto& L : w.layers) {
        L.ln1_gamma = L.ln1_beta = L.ln2_gamma = L.ln2_beta = Tensor<T>({d});
        L.wq = L.wk = L.wv = L.wo = Tensor<T>({d, d});
        L.w1 = Tensor<T>({d, f});
        L.w2 = Tensor<T>({f, d});
    }
    w.reatten.resize(cfg.layers);
    for (auto& R : w.reatten) {
        R.ln_gamma = R.ln_beta = Tensor<T>({d});
        R.rq = R.rk = R.rv = R.ro = Tensor<T>({d, d});
    }
    return w;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

template <typename T>
EncoderWeights<T> init_encoder_weights(const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderWeights<T> w = zero_weights<T>(cfg);
    SplitMix64 rng(seed);
    for_each_param(w, [&](const std::string& name, Tensor<T>& t) {
        if (ends_with(name, ".gamma")) {
            t = Tensor<T>::filled(t.dims(), T(1));
        } else if (ends_with(name, ".beta")) {
            t = Tensor<T>::zeros(t.dims());
        } else {
            t = init_uniform<T>(t.dims(), t.rows(), t.cols(), rng);
        }
    });
    return w;
}

template <typename T>
EncoderWeights<T> init_reatten_from_vit(const EncoderWeights<T>& w) {
    EncoderWeights<T> out = w;
    out.reatten.resize(w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& L = w.layers[l];
        auto& R = out.reatten[l];
        R.rq = L.wq;
        R.rk = L.wk;
        R.rv = L.wv;
        R.ro = L.wo;
        R.ln_gamma = L.ln1_gamma;
        R.ln_beta = L.ln1_beta;
    }
    return out;
}

template <typename T>
void check_weight_shapes(const EncoderWeights<T>& w, const EncoderConfig& cfg) {
    const auto expected = zero_weights<T>(cfg);
    if (w.layers.size() != cfg.layers || w.reatten.size() != cfg.layers) {
        throw ConfigError("weights have " + std::to_string(w.layers.size()) + " layers, config expects " +
                          std::to_string(cfg.layers));
    }
    std::vector<Dims> want;
    for_each_param(expected, [&](const std::string&, const Tensor<T>& t) { want.push_back(t.dims()); });
    std::size_t i = 0;
    for_each_param(w, [&](const std::string& name, const Tensor<T>& t) {
        if (t.dims() != want[i]) {
            throw ConfigError("weight '" + name + "' has shape " + dims_to_string(t.dims()) + ", config expects " +
                              dims_to_string(want[i]));
        }
        ++i;
    });
}

template <typename T>
TensorArchive weights_to_archive(const EncoderWeights<T>& w) {
    TensorArchive a;
    for_each_param(w, [&](const std::string& name, const Tensor<T>& t) { a.add(name, t.template cast<float>()); });
    return a;
}

template <typename T>
EncoderWeights<T> weights_from_archive(const TensorArchive& archive, const EncoderConfig& cfg) {
    EncoderWeights<T> w = zero_weights<T>(cfg);
    std::size_t used = 0;
    for_each_param(w, [&](const std::string& name, Tensor<T>& t) {
        if (!archive.contains(name)) throw ConfigError("weight archive is missing '" + name + "'");
        const auto& src = archive.get(name);
        if (src.dims() != t.dims()) {
            throw ConfigError("weight '" + name + "' has shape " + dims_to_string(src.dims()) +
                              ", config expects " + dims_to_string(t.dims()));
        }
        t = src.template cast<T>();
        ++used;
    });
    for (const auto& [name, t] : archive.entries()) {
        if (name.rfind("projector.", 0) == 0) ++used;
    }
    if (used != archive.size()) throw ConfigError("weight archive has entries unknown to this config");
    return w;
}

template <typename T>
std::size_t parameter_count(const EncoderWeights<T>& w) {
    std::size_t n = 0;
    for_each_param(w, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
}

#define FALCON_INSTANTIATE(T)                                                                  \
    template EncoderWeights<T> zero_weights<T>(const EncoderConfig&);                          \
    template EncoderWeights<T> init_encoder_weights<T>(const EncoderConfig&, std::uint64_t);   \
    template EncoderWeights<T> init_reatten_from_vit(const EncoderWeights<T>&);                \
    template void check_weight_shapes(const EncoderWeights<T>&, const EncoderConfig&);         \
    template TensorArchive weights_to_archive(const EncoderWeights<T>&);                       \
    template EncoderWeights<T> weights_from_archive<T>(const TensorArchive&, const EncoderConfig&); \
    template std::size_t parameter_count(const EncoderWeights<T>&);

FALCON_INSTANTIATE(float)
FALCON_INSTANTIATE(double)
#undef FALCON_INSTANTIATE

template EncoderWeights<double> EncoderWeights<float>::cast<double>() const;
template EncoderWeights<float> EncoderWeights<double>::cast<float>() const;
template EncoderWeights<float> EncoderWeights<float>::cast<float>() const;
template EncoderWeights<double> EncoderWeights<double>::cast<double>() const;

} // namespace falcon
