#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "futh/error.hpp"
#include "futh/rng.hpp"

namespace futh {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d <= 0) throw DimensionError("tensor: non-positive dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor of arbitrary rank. The scalar type is the project's
// precision toggle: float for the training pipeline, double for gradient checks.
template <class T>
class TensorT {
  public:
    TensorT() = default;
    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), T(0)) {}
    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }
    static TensorT uniform(Shape shape, Rng& rng, T lo, T hi) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(std::initializer_list<std::int64_t> idx) { return data_[flat(idx)]; }
    const T& at(std::initializer_list<std::int64_t> idx) const { return data_[flat(idx)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T max_abs() const {
        T m = T(0);
        for (const T& v : data_) m = std::max(m, static_cast<T>(std::abs(v)));
        return m;
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

  private:
    std::size_t flat(std::initializer_list<std::int64_t> idx) const {
        if (idx.size() != shape_.size()) throw DimensionError("tensor: index rank mismatch");
        std::int64_t f = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            if (i < 0 || i >= shape_[k]) throw DimensionError("tensor: index out of range");
            f = f * shape_[k] + i;
            ++k;
        }
        return static_cast<std::size_t>(f);
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

}  // namespace futh
