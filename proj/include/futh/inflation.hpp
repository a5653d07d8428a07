#pragma once

#include "futh/ops.hpp"

namespace futh {

// Replicates a [F,C,kh,kw] kernel N_t times along a new temporal axis and
// divides by N_t, so a repeated-frame video reproduces the 2D response.
template <class T>
TensorT<T> inflate_2d_to_3d(const TensorT<T>& w2d, std::int64_t n_t) {
    const Shape& s = w2d.shape();
    if (s.size() != 4)
        throw DimensionError("inflate_2d_to_3d: expected [F,C,kh,kw] weight, got " + shape_str(s));
    if (n_t < 1) throw InputError("inflate_2d_to_3d: temporal extent must be >= 1");
    const std::int64_t F = s[0], C = s[1], KH = s[2], KW = s[3];
    TensorT<T> w3d({F, C, n_t, KH, KW});
    const T inv = T(1) / static_cast<T>(n_t);
    const std::int64_t plane = KH * KW;
    for (std::int64_t fc = 0; fc < F * C; ++fc)
        for (std::int64_t t = 0; t < n_t; ++t)
            for (std::int64_t i = 0; i < plane; ++i)
                w3d[(fc * n_t + t) * plane + i] = w2d[fc * plane + i] * inv;
    return w3d;
}

// Builds a boring video by repeating a [C,H,W] frame n_t times, runs the
// inflated kernel over it (temporal stride 1, no temporal padding, kt = n_t),
// and reports the max absolute deviation from the plain 2D convolution.
template <class T>
T boring_video_equivalence(const TensorT<T>& frame, const TensorT<T>& w2d, const TensorT<T>& bias,
                           std::int64_t n_t, ops::Dims2 stride_spatial,
                           ops::Dims2 pad_spatial = {0, 0}) {
    const Shape& fs = frame.shape();
    if (fs.size() != 3)
        throw DimensionError("boring_video_equivalence: expected [C,H,W] frame, got " +
                             shape_str(fs));
    const std::int64_t C = fs[0], H = fs[1], W = fs[2];

    TensorT<T> video({1, C, n_t, H, W});
    const std::int64_t plane = H * W;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t t = 0; t < n_t; ++t)
            std::memcpy(video.data() + (c * n_t + t) * plane, frame.data() + c * plane,
                        static_cast<std::size_t>(plane) * sizeof(T));

    auto x3 = make_input(std::move(video));
    auto w3 = make_input(inflate_2d_to_3d(w2d, n_t));
    auto b = make_input(bias);
    auto y3 = ops::conv3d(x3, w3, b, {1, stride_spatial[0], stride_spatial[1]},
                          {0, pad_spatial[0], pad_spatial[1]});

    TensorT<T> image({1, C, H, W}, frame.vec());
    auto x2 = make_input(std::move(image));
    auto w2 = make_input(w2d);
    auto y2 = ops::conv2d(x2, w2, b, stride_spatial, pad_spatial);

    // y3 is [1,F,To,Ho,Wo] with every temporal slice expected equal to y2
    const Shape& s3 = y3->value.shape();
    const std::int64_t F = s3[1], To = s3[2], HoWo = s3[3] * s3[4];
    T worst = T(0);
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t t = 0; t < To; ++t)
            for (std::int64_t i = 0; i < HoWo; ++i) {
                const T d = y3->value[(f * To + t) * HoWo + i] - y2->value[f * HoWo + i];
                worst = std::max(worst, std::abs(d));
            }
    return worst;
}

}  // namespace futh
