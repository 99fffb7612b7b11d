#include "falcon/tensor.hpp"

#include <cmath>
#include <limits>

namespace falcon {

std::string dims_to_string(const Dims& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

namespace {

template <typename T>
void require_2d(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a matrix, got " + dims_to_string(t.dims()));
    }
}

template <typename T>
void require_same_dims(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.dims() != b.dims()) {
        throw ShapeError(std::string(what) + ": " + dims_to_string(a.dims()) + " vs " +
                         dims_to_string(b.dims()));
    }
}

} // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dims differ " + dims_to_string(a.dims()) + " * " +
                         dims_to_string(b.dims()));
    }
    Tensor<T> c({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    // i-t-j order: every c[i,j] still accumulates over t in ascending order.
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const T av = pa[i * k + t];
            const T* brow = pb + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_2d(a, "transpose");
    Tensor<T> out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = a;
    add_inplace(out, b);
    return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require_same_dims(a, b, "add");
    auto pa = a.data();
    auto pb = b.data();
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += pb[i];
}

template <typename T>
void add_row_bias(Tensor<T>& a, const Tensor<T>& bias) {
    if (bias.size() != a.cols()) {
        throw ShapeError("bias length " + std::to_string(bias.size()) + " != cols " +
                         std::to_string(a.cols()));
    }
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
}

template <typename T>
void scale_inplace(Tensor<T>& a, T factor) {
    for (auto& v : a.data()) v *= factor;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    require_2d(x, "softmax_rows");
    Tensor<T> out(x.dims());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : in) {
            if (std::isnan(v)) throw NumericError("softmax_rows: NaN in row " + std::to_string(r));
            mx = std::max(mx, v);
        }
        T sum = 0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (auto& v : o) v /= sum;
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (!(eps > T(0))) throw NumericError("layer_norm: eps must be positive");
    const std::size_t d = x.cols();
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("layer_norm: affine params must have length " + std::to_string(d));
    }
    Tensor<T> out(x.dims());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mean = 0;
        for (T v : in) mean += v;
        mean /= static_cast<T>(d);
        T var = 0;
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) o[c] = (in[c] - mean) * inv * gamma[c] + beta[c];
    }
    return out;
}

template <typename T>
T gelu(T x) {
    const T k = static_cast<T>(0.7978845608028654); // sqrt(2/pi)
    return T(0.5) * x * (T(1) + std::tanh(k * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.data()) v = gelu(v);
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    require_2d(x, "slice_rows");
    if (begin >= end || end > x.rows()) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + std::to_string(x.rows()));
    }
    const std::size_t n = x.cols();
    auto src = x.data().subspan(begin * n, (end - begin) * n);
    return Tensor<T>({end - begin, n}, std::vector<T>(src.begin(), src.end()));
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    require_2d(x, "slice_cols");
    if (begin >= end || end > x.cols()) throw ShapeError("slice_cols: bad range");
    Tensor<T> out({x.rows(), end - begin});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != n) throw ShapeError("concat_rows: column count differs");
        rows += p.rows();
    }
    std::vector<T> data;
    data.reserve(rows * n);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor<T>({rows, n}, std::move(data));
}

template <typename T>
void set_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t col_begin) {
    if (src.rows() != dst.rows() || col_begin + src.cols() > dst.cols()) {
        throw ShapeError("set_cols: block does not fit");
    }
    for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) dst(r, col_begin + c) = src(r, c);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_dims(a, b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (std::isnan(d)) return std::numeric_limits<double>::infinity();
        m = std::max(m, d);
    }
    return m;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

#define FALCON_INSTANTIATE(T)                                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> transpose(const Tensor<T>&);                                            \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
    template void add_inplace(Tensor<T>&, const Tensor<T>&);                                   \
    template void add_row_bias(Tensor<T>&, const Tensor<T>&);                                  \
    template void scale_inplace(Tensor<T>&, T);                                                \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                         \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
    template T gelu(T);                                                                        \
    template Tensor<T> gelu(const Tensor<T>&);                                                 \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                 \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                 \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                             \
    template void set_cols(Tensor<T>&, const Tensor<T>&, std::size_t);                         \
    template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);                          \
    template bool all_finite(const Tensor<T>&);

FALCON_INSTANTIATE(float)
FALCON_INSTANTIATE(double)

#undef FALCON_INSTANTIATE

} // namespace falcon
