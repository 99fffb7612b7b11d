#include "falcon/autodiff.hpp"

#include <cmath>

namespace falcon::autodiff {

NodeId Tape::push(TensorD value, std::function<void(Tape&, NodeId)> backward) {
    TensorD grad = TensorD::zeros(value.dims());
    nodes_.push_back(Node{std::move(value), std::move(grad), std::move(backward)});
    return nodes_.size() - 1;
}

void Tape::accumulate(NodeId id, const TensorD& g) { add_inplace(grad_ref(id), g); }

NodeId Tape::leaf(TensorD value) { return push(std::move(value), nullptr); }

NodeId Tape::matmul(NodeId a, NodeId b) {
    return push(falcon::matmul(value(a), value(b)), [a, b](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        t.accumulate(a, falcon::matmul(g, falcon::transpose(t.value(b))));
        t.accumulate(b, falcon::matmul(falcon::transpose(t.value(a)), g));
    });
}

NodeId Tape::add(NodeId a, NodeId b) {
    return push(falcon::add(value(a), value(b)), [a, b](Tape& t, NodeId self) {
        t.accumulate(a, t.grad(self));
        t.accumulate(b, t.grad(self));
    });
}

NodeId Tape::scale(NodeId a, double factor) {
    TensorD v = value(a);
    scale_inplace(v, factor);
    return push(std::move(v), [a, factor](Tape& t, NodeId self) {
        TensorD g = t.grad(self);
        scale_inplace(g, factor);
        t.accumulate(a, g);
    });
}

NodeId Tape::transpose(NodeId a) {
    return push(falcon::transpose(value(a)),
                [a](Tape& t, NodeId self) { t.accumulate(a, falcon::transpose(t.grad(self))); });
}

NodeId Tape::softmax_rows(NodeId a) {
    return push(falcon::softmax_rows(value(a)), [a](Tape& t, NodeId self) {
        const TensorD& p = t.value(self);
        const TensorD& g = t.grad(self);
        TensorD da(p.dims());
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double dot = 0;
            for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
            for (std::size_t c = 0; c < p.cols(); ++c) da(r, c) = p(r, c) * (g(r, c) - dot);
        }
        t.accumulate(a, da);
    });
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const TensorD& xv = value(x);
    const std::size_t rows = xv.rows(), d = xv.cols();
    TensorD xhat(xv.dims());
    std::vector<double> inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0;
        for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
        var /= static_cast<double>(d);
        inv[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (xv(r, c) - mean) * inv[r];
    }
    TensorD y(xv.dims());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) y(r, c) = xhat(r, c) * value(gamma)[c] + value(beta)[c];

    return push(std::move(y), [x, gamma, beta, xhat, inv](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        const TensorD& gm = t.value(gamma);
        const std::size_t rows = g.rows(), d = g.cols();
        TensorD dgamma(gm.dims()), dbeta(gm.dims()), dx(g.dims());
        for (std::size_t r = 0; r < rows; ++r) {
            double mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t c = 0; c < d; ++c) {
                const double dxh = g(r, c) * gm[c];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat(r, c);
                dgamma[c] += g(r, c) * xhat(r, c);
                dbeta[c] += g(r, c);
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
                dx(r, c) = inv[r] * (g(r, c) * gm[c] - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
            }
        }
        t.accumulate(x, dx);
        t.accumulate(gamma, dgamma);
        t.accumulate(beta, dbeta);
    });
}

NodeId Tape::gelu(NodeId a) {
    return push(falcon::gelu(value(a)), [a](Tape& t, NodeId self) {
        constexpr double k = 0.7978845608028654;
        constexpr double c3 = 0.044715;
        const TensorD& x = t.value(a);
        TensorD da(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i];
            const double th = std::tanh(k * (v + c3 * v * v * v));
            const double deriv = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c3 * v * v);
            da[i] = t.grad(self)[i] * deriv;
        }
        t.accumulate(a, da);
    });
}

NodeId Tape::slice_rows(NodeId a, std::size_t begin, std::size_t end) {
    return push(falcon::slice_rows(value(a), begin, end), [a, begin](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        TensorD& ga = t.grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(begin + r, c) += g(r, c);
    });
}

NodeId Tape::slice_cols(NodeId a, std::size_t begin, std::size_t end) {
    return push(falcon::slice_cols(value(a), begin, end), [a, begin](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        TensorD& ga = t.grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
    });
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    std::vector<TensorD> values;
    for (auto p : parts) values.push_back(value(p));
    return push(falcon::concat_rows(values), [parts](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        std::size_t offset = 0;
        for (auto p : parts) {
            TensorD& gp = t.grad_ref(p);
            const std::size_t n = gp.size();
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
            offset += n;
        }
    });
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    std::size_t rows = value(parts.front()).rows(), cols = 0;
    for (auto p : parts) cols += value(p).cols();
    TensorD out({rows, cols});
    std::size_t c0 = 0;
    for (auto p : parts) {
        set_cols(out, value(p), c0);
        c0 += value(p).cols();
    }
    return push(std::move(out), [parts](Tape& t, NodeId self) {
        const TensorD& g = t.grad(self);
        std::size_t c0 = 0;
        for (auto p : parts) {
            const std::size_t w = t.value(p).cols();
            t.accumulate(p, falcon::slice_cols(g, c0, c0 + w));
            c0 += w;
        }
    });
}

NodeId Tape::sum(NodeId a) {
    double s = 0;
    for (double v : value(a).data()) s += v;
    return push(TensorD({1}, {s}), [a](Tape& t, NodeId self) {
        const double g = t.grad(self)[0];
        for (auto& v : t.grad_ref(a).data()) v += g;
    });
}

void Tape::backward(NodeId root) {
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad = TensorD::zeros(n.value.dims());
    nodes_[root].grad[0] = 1.0;
    for (NodeId id = root + 1; id-- > 0;) {
        if (nodes_[id].backward) nodes_[id].backward(*this, id);
    }
}

} // namespace falcon::autodiff
