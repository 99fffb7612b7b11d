#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "falcon/errors.hpp"

namespace falcon {

using Dims = std::vector<std::size_t>;

std::string dims_to_string(const Dims& dims);

/// Dense row-major tensor. The element type is the working precision:
/// float for normal runs, double in verification mode.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Dims dims) : dims_(std::move(dims)) {
        check_dims(dims_);
        data_.assign(element_count(dims_), T(0));
    }

    Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        check_dims(dims_);
        if (data_.size() != element_count(dims_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match dims " + dims_to_string(dims_));
        }
    }

    static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }

    static Tensor filled(Dims dims, T value) {
        Tensor t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
        return t;
    }

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; a rank-1 tensor is treated as a single row.
    std::size_t rows() const { return dims_.size() == 1 ? 1 : dims_[0]; }
    std::size_t cols() const { return dims_.back(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    const std::vector<T>& values() const { return data_; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    Tensor reshaped(Dims dims) const {
        if (element_count(dims) != data_.size()) {
            throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
        }
        return Tensor(std::move(dims), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(dims_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

    static std::size_t element_count(const Dims& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    static void check_dims(const Dims& dims) {
        if (dims.empty()) throw ShapeError("tensor dims must be non-empty");
        for (auto d : dims) {
            if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + dims_to_string(dims));
        }
    }

    Dims dims_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Kernels. All reductions run in ascending index order in the working type.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

/// Adds a length-cols bias to every row.
template <typename T>
void add_row_bias(Tensor<T>& a, const Tensor<T>& bias);

template <typename T>
void scale_inplace(Tensor<T>& a, T factor);

/// Row-wise softmax with max subtraction. Throws NumericError on NaN input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// tanh-approximated GeLU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
T gelu(T x);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Writes src into columns [col_begin, col_begin + src.cols()) of dst.
template <typename T>
void set_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t col_begin);

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
bool all_finite(const Tensor<T>& x);

} // namespace falcon
