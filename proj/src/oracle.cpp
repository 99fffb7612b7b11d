#include "falcon/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "falcon/encoder.hpp"
#include "falcon/errors.hpp"
#include "falcon/gradients.hpp"

namespace falcon::oracle {

std::uint64_t attention_flops(std::uint64_t rows, std::uint64_t width) {
    return 4 * rows * width * width + 2 * rows * rows * width;
}

std::uint64_t ffn_flops(std::uint64_t rows, std::uint64_t width, std::uint64_t ffn_mult) {
    return 2 * ffn_mult * rows * width * width;
}

FlopReport count_flops(const EncoderConfig& cfg, std::size_t n_tiles, bool thumbnail, std::size_t llm_width) {
    const std::uint64_t inputs = n_tiles + (thumbnail ? 1 : 0);
    const std::uint64_t rows = cfg.image_tokens() + cfg.registers;
    const std::uint64_t d = cfg.width;
    FlopReport r;
    r.self_attention = cfg.layers * inputs * attention_flops(rows, d);
    r.ffn = cfg.layers * inputs * ffn_flops(rows, d, cfg.ffn_mult);
    if (cfg.reatten_enabled) r.reatten = cfg.layers * attention_flops(cfg.registers * inputs, d);
    r.tokens_in = inputs * cfg.image_tokens();
    r.tokens_out = inputs * cfg.registers;
    if (llm_width > 0) r.projector = r.tokens_out * (d * llm_width + std::uint64_t(llm_width) * llm_width);
    r.total = r.self_attention + r.reatten + r.ffn + r.projector;
    return r;
}

std::uint64_t compressor_flops_per_tile(CompressorKind kind, const EncoderConfig& cfg, std::size_t target) {
    const std::uint64_t n = cfg.image_tokens(), d = cfg.width, t = target, mult = cfg.ffn_mult;
    switch (kind) {
    case CompressorKind::registers: {
        const std::uint64_t with = attention_flops(n + cfg.registers, d) + ffn_flops(n + cfg.registers, d, mult);
        const std::uint64_t without = attention_flops(n, d) + ffn_flops(n, d, mult);
        return cfg.layers * (with - without);
    }
    case CompressorKind::pool:
        compressor_geometry(n, target);
        return n * d;
    case CompressorKind::pixel_shuffle:
        compressor_geometry(n, target);
        return n * d * d;  // target rows x (factor^2 D) x D
    case CompressorKind::abstractor: {
        const std::uint64_t per_block = t * d * d + 2 * n * d * d + 2 * t * n * d + t * d * d + ffn_flops(t, d, mult);
        return kAbstractorBlocks * per_block;
    }
    }
    return 0;
}

std::uint64_t reatten_flops_per_tile(const EncoderConfig& cfg, std::size_t n_tiles, bool thumbnail) {
    const std::size_t inputs = n_tiles + (thumbnail ? 1 : 0);
    if (!cfg.reatten_enabled || inputs == 0) return 0;
    return count_flops(cfg, n_tiles, thumbnail).reatten / inputs;
}

std::uint64_t compressor_parameter_count(CompressorKind kind, const EncoderConfig& cfg, std::size_t target) {
    const std::uint64_t d = cfg.width, mult = cfg.ffn_mult;
    switch (kind) {
    case CompressorKind::registers:
        return cfg.registers * d + (cfg.reatten_enabled ? cfg.layers * (4 * d * d + 2 * d) : 0);
    case CompressorKind::pool:
        return 0;
    case CompressorKind::pixel_shuffle: {
        const auto g = compressor_geometry(cfg.image_tokens(), target);
        return g.factor * g.factor * d * d;
    }
    case CompressorKind::abstractor:
        return target * d + kAbstractorBlocks * (6 * d + 4 * d * d + 2 * mult * d * d);
    }
    return 0;
}

namespace {

// Minimal row-major matrix for the reference path.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Mat from_tensor(const TensorD& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) m.v[i] = t[i];
    return m;
}

TensorD to_tensor(const Mat& m) { return TensorD({m.rows, m.cols}, m.v); }

Mat mul(const Mat& a, const Mat& b, std::uint64_t* flops) {
    if (a.cols != b.rows) throw ShapeError("reference matmul: inner dims differ");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0;
            for (std::size_t t = 0; t < a.cols; ++t) {
                acc += a.at(i, t) * b.at(t, j);
                if (flops) ++*flops;
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

Mat norm(const Mat& x, const TensorD& gamma, const TensorD& beta, double eps) {
    Mat y(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double mean = 0;
        for (std::size_t c = 0; c < x.cols; ++c) mean += x.at(r, c);
        mean /= static_cast<double>(x.cols);
        double var = 0;
        for (std::size_t c = 0; c < x.cols; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
        var /= static_cast<double>(x.cols);
        for (std::size_t c = 0; c < x.cols; ++c)
            y.at(r, c) = (x.at(r, c) - mean) / std::sqrt(var + eps) * gamma[c] + beta[c];
    }
    return y;
}

double gelu_ref(double x) {
    const double pi = std::acos(-1.0);
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (x + 0.044715 * x * x * x)));
}

void accumulate(Mat& a, const Mat& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

// Multi-head attention: queries from xq, keys/values from xkv.
Mat attention(const Mat& xq, const Mat& xkv, const TensorD& wq, const TensorD& wk, const TensorD& wv,
              const TensorD& wo, std::size_t heads, std::uint64_t* flops) {
    const Mat q = mul(xq, from_tensor(wq), flops);
    const Mat k = mul(xkv, from_tensor(wk), flops);
    const Mat v = mul(xkv, from_tensor(wv), flops);
    const std::size_t d = q.cols, dk = d / heads;
    Mat merged(xq.rows, d);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < xq.rows; ++i) {
            std::vector<double> s(xkv.rows);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < xkv.rows; ++j) {
                double acc = 0;
                for (std::size_t c = 0; c < dk; ++c) {
                    acc += q.at(i, h * dk + c) * k.at(j, h * dk + c);
                    if (flops) ++*flops;
                }
                s[j] = acc / std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, s[j]);
            }
            double z = 0;
            for (auto& e : s) {
                e = std::exp(e - mx);
                z += e;
            }
            for (std::size_t c = 0; c < dk; ++c) {
                double acc = 0;
                for (std::size_t j = 0; j < xkv.rows; ++j) {
                    acc += s[j] / z * v.at(j, h * dk + c);
                    if (flops) ++*flops;
                }
                merged.at(i, h * dk + c) = acc;
            }
        }
    }
    return mul(merged, from_tensor(wo), flops);
}

Mat ffn(const Mat& x, const TensorD& gamma, const TensorD& beta, const TensorD& w1, const TensorD& w2, double eps,
        std::uint64_t* flops) {
    Mat h = mul(norm(x, gamma, beta, eps), from_tensor(w1), flops);
    for (auto& e : h.v) e = gelu_ref(e);
    return mul(h, from_tensor(w2), flops);
}

std::uint64_t* slot(FlopCounter* c, std::uint64_t FlopCounter::*member) { return c ? &(c->*member) : nullptr; }

} // namespace

TensorD brute_force_attention(const TensorD& q, const TensorD& k, const TensorD& v) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeError("brute_force_attention: shape mismatch");
    const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
    TensorD out({n, v.cols()});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(m);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += q(i, c) * k(j, c);
            w[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (auto& e : w) {
            e = std::exp(e - mx);
            z += e;
        }
        for (std::size_t c = 0; c < v.cols(); ++c) {
            double acc = 0;
            for (std::size_t j = 0; j < m; ++j) acc += w[j] / z * v(j, c);
            out(i, c) = acc;
        }
    }
    return out;
}

namespace {

// Shared loop forward. Without registers there is no exchange step either.
std::vector<Mat> reference_forward(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                   const EncoderConfig& cfg, bool with_registers, FlopCounter* counter) {
    cfg.validate();
    const std::size_t p = cfg.patch, g = cfg.grid_side(), n = cfg.image_tokens(),
                      m = with_registers ? cfg.registers : 0, d = cfg.width;
    if (tiles.empty()) throw ConfigError("encode_reference: no input tiles");
    if (tiles.size() * (n + m) > kReferenceTokenCap) {
        throw RefusalError("encode_reference: " + std::to_string(tiles.size() * (n + m)) +
                           " tokens exceed the reference cap of " + std::to_string(kReferenceTokenCap));
    }
    const double eps = cfg.ln_eps;

    std::vector<Mat> hidden;
    for (const auto& tile : tiles) {
        if (tile.height != cfg.tile || tile.width != cfg.tile) throw ConfigError("encode_reference: tile size mismatch");
        Mat x(n + m, d);
        for (std::size_t pr = 0; pr < g; ++pr) {
            for (std::size_t pc = 0; pc < g; ++pc) {
                const std::size_t tok = pr * g + pc;
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0;
                    std::size_t feat = 0;
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t xx = 0; xx < p; ++xx)
                            for (std::size_t c = 0; c < 3; ++c) {
                                const float px = tile.pixels[((pr * p + y) * tile.width + pc * p + xx) * 3 + c];
                                acc += static_cast<double>((px - 0.5f) / 0.5f) * w.patch_embed(feat++, j);
                            }
                    x.at(tok, j) = acc + w.pos_embed(tok, j);
                }
            }
        }
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < d; ++j) x.at(n + r, j) = w.registers(r, j);
        hidden.push_back(std::move(x));
    }

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& L = w.layers[l];
        for (auto& x : hidden) {
            const Mat xn = norm(x, L.ln1_gamma, L.ln1_beta, eps);
            accumulate(x, attention(xn, xn, L.wq, L.wk, L.wv, L.wo, cfg.heads,
                                    slot(counter, &FlopCounter::self_attention)));
        }
        if (with_registers && cfg.reatten_enabled) {
            const auto& R = w.reatten[l];
            Mat regs(m * hidden.size(), d);
            for (std::size_t k = 0; k < hidden.size(); ++k)
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < d; ++j) regs.at(k * m + r, j) = hidden[k].at(n + r, j);
            const Mat rn = norm(regs, R.ln_gamma, R.ln_beta, eps);
            accumulate(regs, attention(rn, rn, R.rq, R.rk, R.rv, R.ro, cfg.heads, slot(counter, &FlopCounter::reatten)));
            for (std::size_t k = 0; k < hidden.size(); ++k)
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < d; ++j) hidden[k].at(n + r, j) = regs.at(k * m + r, j);
        }
        for (auto& x : hidden) {
            accumulate(x, ffn(x, L.ln2_gamma, L.ln2_beta, L.w1, L.w2, eps, slot(counter, &FlopCounter::ffn)));
        }
    }

    return hidden;
}

} // namespace

TensorD encode_reference(std::span<const Image> tiles, const EncoderWeights<double>& w, const EncoderConfig& cfg,
                         FlopCounter* counter) {
    const auto hidden = reference_forward(tiles, w, cfg, true, counter);
    const std::size_t n = cfg.image_tokens(), m = cfg.registers, d = cfg.width;
    TensorD out({m * hidden.size(), d});
    for (std::size_t k = 0; k < hidden.size(); ++k)
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < d; ++j) out(k * m + r, j) = hidden[k].at(n + r, j);
    return out;
}

std::vector<TensorD> encode_image_tokens_reference(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                                   const EncoderConfig& cfg, FlopCounter* counter) {
    const auto hidden = reference_forward(tiles, w, cfg, false, counter);
    std::vector<TensorD> out;
    for (const auto& x : hidden) {
        TensorD t({cfg.image_tokens(), cfg.width});
        for (std::size_t i = 0; i < cfg.image_tokens(); ++i)
            for (std::size_t j = 0; j < cfg.width; ++j) t(i, j) = x.at(i, j);
        out.push_back(std::move(t));
    }
    return out;
}

TensorD project_reference(const TensorD& f, const ProjectorWeights<double>& w, FlopCounter* counter) {
    auto* flops = slot(counter, &FlopCounter::projector);
    Mat h = mul(from_tensor(f), from_tensor(w.w1), flops);
    for (std::size_t r = 0; r < h.rows; ++r)
        for (std::size_t c = 0; c < h.cols; ++c) h.at(r, c) = gelu_ref(h.at(r, c) + w.b1[c]);
    Mat out = mul(h, from_tensor(w.w2), flops);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += w.b2[c];
    return to_tensor(out);
}

TensorD avg_pool_reference(const TensorD& feats, std::size_t target, FlopCounter* counter) {
    const auto g = compressor_geometry(feats.rows(), target);
    const std::size_t d = feats.cols();
    TensorD out({target, d});
    for (std::size_t i = 0; i < feats.rows(); ++i) {
        const std::size_t y = i / g.side, x = i % g.side;
        const std::size_t o = (y / g.factor) * g.out_side + x / g.factor;
        for (std::size_t c = 0; c < d; ++c) {
            out(o, c) += feats(i, c) / static_cast<double>(g.factor * g.factor);
            if (counter) ++counter->compressor;
        }
    }
    return out;
}

TensorD pixel_shuffle_reference(const TensorD& feats, const TensorD& proj, std::size_t target, FlopCounter* counter) {
    const auto g = compressor_geometry(feats.rows(), target);
    const std::size_t d = feats.cols();
    if (proj.rows() != g.factor * g.factor * d) throw ShapeError("pixel_shuffle_reference: projection rows");
    TensorD out({target, proj.cols()});
    for (std::size_t o = 0; o < target; ++o) {
        const std::size_t oy = o / g.out_side, ox = o % g.out_side;
        for (std::size_t j = 0; j < proj.cols(); ++j) {
            double acc = 0;
            for (std::size_t nb = 0; nb < g.factor * g.factor; ++nb) {
                const std::size_t src = (oy * g.factor + nb / g.factor) * g.side + ox * g.factor + nb % g.factor;
                for (std::size_t c = 0; c < d; ++c) {
                    acc += feats(src, c) * proj(nb * d + c, j);
                    if (counter) ++counter->compressor;
                }
            }
            out(o, j) = acc;
        }
    }
    return out;
}

TensorD abstractor_reference(const TensorD& feats, const AbstractorWeights<double>& w, std::size_t heads,
                             FlopCounter* counter) {
    auto* flops = slot(counter, &FlopCounter::compressor);
    Mat q = from_tensor(w.queries);
    const Mat f = from_tensor(feats);
    for (const auto& b : w.blocks) {
        const Mat qn = norm(q, b.ln_q_gamma, b.ln_q_beta, 1e-6);
        const Mat fn = norm(f, b.ln_kv_gamma, b.ln_kv_beta, 1e-6);
        accumulate(q, attention(qn, fn, b.wq, b.wk, b.wv, b.wo, heads, flops));
        accumulate(q, ffn(q, b.ln2_gamma, b.ln2_beta, b.w1, b.w2, 1e-6, flops));
    }
    return to_tensor(q);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double h) {
    if (!(h > 0)) throw NumericError("finite_diff_grad: step must be positive");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> grad(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double up = loss(p);
        p[i] = orig - h;
        const double down = loss(p);
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite loss at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

bool GradReport::pass() const {
    if (entries.empty()) return false;
    return std::all_of(entries.begin(), entries.end(), [](const GradEntry& e) { return e.pass; });
}

GradReport check_encoder_gradients(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                   const EncoderConfig& cfg, double step, double tolerance) {
    const EncoderGradients analytic = encoder_loss_gradients(tiles, w, cfg);

    std::vector<std::string> names;
    std::vector<const TensorD*> grads;
    for_each_param(analytic.grads, [&](const std::string& name, const TensorD& g) {
        names.push_back(name);
        grads.push_back(&g);
    });

    GradReport report;
    report.step = step;
    report.tolerance = tolerance;
    for (std::size_t idx = 0; idx < names.size(); ++idx) {
        EncoderWeights<double> probe = w;
        TensorD* target = nullptr;
        std::size_t i = 0;
        for_each_param(probe, [&](const std::string&, TensorD& t) {
            if (i++ == idx) target = &t;
        });
        const std::vector<double> base(target->data().begin(), target->data().end());
        const auto loss = [&](std::span<const double> values) {
            std::copy(values.begin(), values.end(), target->data().begin());
            const TensorD f = encode<double>(tiles, probe, cfg).f_hr;
            double s = 0;
            for (double v : f.data()) s += v;
            return s;
        };
        const std::vector<double> numeric = finite_diff_grad(loss, base, step);

        GradEntry e;
        e.name = names[idx];
        e.size = numeric.size();
        double scale_a = 0, scale_n = 0;
        for (std::size_t k = 0; k < numeric.size(); ++k) {
            const double a = (*grads[idx])[k];
            e.max_abs_err = std::max(e.max_abs_err, std::abs(a - numeric[k]));
            scale_a = std::max(scale_a, std::abs(a));
            scale_n = std::max(scale_n, std::abs(numeric[k]));
        }
        const double scale = std::max(scale_a, scale_n);
        e.max_rel_err = scale > 1e-12 ? e.max_abs_err / scale : e.max_abs_err;
        e.pass = std::isfinite(e.max_rel_err) && e.max_rel_err <= tolerance;
        report.entries.push_back(std::move(e));
    }
    return report;
}

} // namespace falcon::oracle
