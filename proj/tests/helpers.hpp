#pragma once

#include <cstdio>
#include <string>

#include "futh/rng.hpp"
#include "futh/tensor.hpp"

namespace testutil {

template <class T>
double max_abs_diff(const futh::TensorT<T>& a, const futh::TensorT<T>& b) {
    if (!a.same_shape(b)) return 1e30;
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class T>
futh::TensorT<T> randn(const futh::Shape& shape, std::uint64_t seed, double stddev = 1.0) {
    futh::Rng rng(seed);
    return futh::TensorT<T>::randn(shape, rng, stddev);
}

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace testutil
