#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "futh/graph.hpp"
#include "futh/parallel.hpp"

namespace futh::ops {

using Dims2 = std::array<std::int64_t, 2>;
using Dims3 = std::array<std::int64_t, 3>;

namespace detail {

template <class T>
inline void axpy(T a, const T* x, T* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
inline T dot(const T* x, const T* y, std::int64_t n) {
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

inline std::int64_t conv_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                std::int64_t pad, const char* what) {
    if (stride <= 0) throw InputError(std::string(what) + ": stride must be positive");
    if (pad < 0) throw InputError(std::string(what) + ": negative padding");
    const std::int64_t padded = in + 2 * pad;
    if (k > padded)
        throw DimensionError(std::string(what) + ": kernel extent " + std::to_string(k) +
                             " exceeds padded input extent " + std::to_string(padded));
    return (padded - k) / stride + 1;
}

template <class T>
VarT<T> make_node(TensorT<T> value, std::vector<VarT<T>> inputs, const char* op,
                  std::function<void(NodeT<T>&)> backward_op) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->op = op;
    bool need = false;
    for (const auto& in : inputs) need = need || (in && in->requires_grad);
    n->requires_grad = need;
    if (need) {
        n->inputs = std::move(inputs);
        n->backward_op = std::move(backward_op);
    }
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / shape ops
// ---------------------------------------------------------------------------

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                             shape_str(b->value.shape()));
    TensorT<T> out(a->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return detail::make_node<T>(std::move(out), {a, b}, "add", [a, b](NodeT<T>& self) {
        const std::int64_t n = self.grad.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i];
        }
    });
}

template <class T>
VarT<T> scale(const VarT<T>& x, T alpha) {
    TensorT<T> out(x->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = alpha * x->value[i];
    return detail::make_node<T>(std::move(out), {x}, "scale", [x, alpha](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const std::int64_t n = self.grad.numel();
        for (std::int64_t i = 0; i < n; ++i) x->grad[i] += alpha * self.grad[i];
    });
}

template <class T>
VarT<T> hadamard(const VarT<T>& a, const VarT<T>& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("hadamard: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                             shape_str(b->value.shape()));
    TensorT<T> out(a->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return detail::make_node<T>(std::move(out), {a, b}, "hadamard", [a, b](NodeT<T>& self) {
        const std::int64_t n = self.grad.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i] * a->value[i];
        }
    });
}

// Elementwise max; ties route the gradient to the first argument.
template <class T>
VarT<T> emax(const VarT<T>& a, const VarT<T>& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("emax: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                             shape_str(b->value.shape()));
    TensorT<T> out(a->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i)
        out[i] = a->value[i] >= b->value[i] ? a->value[i] : b->value[i];
    return detail::make_node<T>(std::move(out), {a, b}, "emax", [a, b](NodeT<T>& self) {
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        const std::int64_t n = self.grad.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const bool first = a->value[i] >= b->value[i];
            if (first && a->requires_grad) a->grad[i] += self.grad[i];
            if (!first && b->requires_grad) b->grad[i] += self.grad[i];
        }
    });
}

template <class T>
VarT<T> relu(const VarT<T>& x) {
    TensorT<T> out(x->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    // Subgradient at exactly 0 is defined as 0.
    return detail::make_node<T>(std::move(out), {x}, "relu", [x](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const std::int64_t n = self.grad.numel();
        for (std::int64_t i = 0; i < n; ++i)
            if (x->value[i] > T(0)) x->grad[i] += self.grad[i];
    });
}

template <class T>
VarT<T> sum(const VarT<T>& x) {
    T acc = T(0);
    for (std::int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
    TensorT<T> out({1});
    out[0] = acc;
    return detail::make_node<T>(std::move(out), {x}, "sum", [x](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T g = self.grad[0];
        for (std::int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += g;
    });
}

template <class T>
VarT<T> reshape(const VarT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->value.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x->value.shape()) + " as " +
                             shape_str(new_shape));
    TensorT<T> out(std::move(new_shape), x->value.vec());
    return detail::make_node<T>(std::move(out), {x}, "reshape", [x](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += self.grad[i];
    });
}

template <class T>
VarT<T> concat(const std::vector<VarT<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw InputError("concat: no parts");
    const Shape& ref = parts[0]->value.shape();
    if (axis >= ref.size()) throw InputError("concat: axis out of range");
    Shape out_shape = ref;
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p->value.shape();
        if (s.size() != ref.size())
            throw DimensionError("concat: rank mismatch between parts");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != ref[d])
                throw DimensionError("concat: extent mismatch on axis " + std::to_string(d) +
                                     ": " + shape_str(s) + " vs " + shape_str(ref));
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];

    TensorT<T> out(out_shape);
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t pa = p->value.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * axis_total + off) * inner,
                        p->value.data() + o * pa * inner,
                        static_cast<std::size_t>(pa * inner) * sizeof(T));
        off += pa;
    }

    return detail::make_node<T>(
        std::move(out), parts, "concat",
        [parts, outer, inner, axis_total, axis](NodeT<T>& self) {
            std::int64_t off = 0;
            for (const auto& p : parts) {
                const std::int64_t pa = p->value.dim(axis);
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* src = self.grad.data() + (o * axis_total + off) * inner;
                        T* dst = p->grad.data() + o * pa * inner;
                        for (std::int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                    }
                }
                off += pa;
            }
        });
}

// Selects frame t from a [B,C,T,H,W] clip as a [B,C,H,W] image.
template <class T>
VarT<T> take_frame(const VarT<T>& clip, std::int64_t t) {
    const Shape& s = clip->value.shape();
    if (s.size() != 5) throw DimensionError("take_frame: expected rank-5 clip, got " + shape_str(s));
    const std::int64_t B = s[0], C = s[1], Tn = s[2], HW = s[3] * s[4];
    if (t < 0 || t >= Tn) throw InputError("take_frame: frame index out of range");
    TensorT<T> out({B, C, s[3], s[4]});
    for (std::int64_t bc = 0; bc < B * C; ++bc)
        std::memcpy(out.data() + bc * HW, clip->value.data() + (bc * Tn + t) * HW,
                    static_cast<std::size_t>(HW) * sizeof(T));
    return detail::make_node<T>(std::move(out), {clip}, "take_frame", [clip, t, HW, Tn](NodeT<T>& self) {
        if (!clip->requires_grad) return;
        clip->ensure_grad();
        const std::int64_t BC = self.grad.numel() / HW;
        for (std::int64_t bc = 0; bc < BC; ++bc) {
            const T* src = self.grad.data() + bc * HW;
            T* dst = clip->grad.data() + (bc * Tn + t) * HW;
            for (std::int64_t i = 0; i < HW; ++i) dst[i] += src[i];
        }
    });
}

// Gathers the rows named by `idx` from [B,T,D] features and concatenates them
// per batch item into [B, |idx|*D], preserving the given order.
template <class T>
VarT<T> gather_rows(const VarT<T>& feats, std::vector<std::int64_t> idx) {
    const Shape& s = feats->value.shape();
    if (s.size() != 3) throw DimensionError("gather_rows: expected [B,T,D], got " + shape_str(s));
    const std::int64_t B = s[0], Tn = s[1], D = s[2];
    const std::int64_t m = static_cast<std::int64_t>(idx.size());
    if (m == 0) throw InputError("gather_rows: empty index tuple");
    for (auto i : idx)
        if (i < 0 || i >= Tn) throw InputError("gather_rows: index out of range");
    TensorT<T> out({B, m * D});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t j = 0; j < m; ++j)
            std::memcpy(out.data() + (b * m + j) * D, feats->value.data() + (b * Tn + idx[j]) * D,
                        static_cast<std::size_t>(D) * sizeof(T));
    return detail::make_node<T>(
        std::move(out), {feats}, "gather_rows", [feats, idx, B, Tn, D, m](NodeT<T>& self) {
            if (!feats->requires_grad) return;
            feats->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t j = 0; j < m; ++j) {
                    const T* src = self.grad.data() + (b * m + j) * D;
                    T* dst = feats->grad.data() + (b * Tn + idx[j]) * D;
                    for (std::int64_t i = 0; i < D; ++i) dst[i] += src[i];
                }
        });
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 2 || ws.size() != 2)
        throw DimensionError("linear: expected [B,Din] and [Dout,Din], got " + shape_str(xs) +
                             " and " + shape_str(ws));
    const std::int64_t B = xs[0], Din = xs[1], Dout = ws[0];
    if (ws[1] != Din)
        throw DimensionError("linear: inner dimensions disagree: " + shape_str(xs) + " vs " +
                             shape_str(ws));
    if (b->value.numel() != Dout)
        throw DimensionError("linear: bias length " + std::to_string(b->value.numel()) +
                             " != output width " + std::to_string(Dout));

    TensorT<T> out({B, Dout});
    parallel_for(B, [&](std::int64_t bi) {
        const T* xr = x->value.data() + bi * Din;
        T* yr = out.data() + bi * Dout;
        for (std::int64_t o = 0; o < Dout; ++o)
            yr[o] = b->value[o] + detail::dot(xr, w->value.data() + o * Din, Din);
    });

    return detail::make_node<T>(std::move(out), {x, w, b}, "linear",
                                [x, w, b, B, Din, Dout](NodeT<T>& self) {
        const TensorT<T>& g = self.grad;
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::int64_t bi = 0; bi < B; ++bi) {
                T* gx = x->grad.data() + bi * Din;
                const T* gr = g.data() + bi * Dout;
                for (std::int64_t o = 0; o < Dout; ++o)
                    detail::axpy(gr[o], w->value.data() + o * Din, gx, Din);
            }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const T* xr = x->value.data() + bi * Din;
                const T* gr = g.data() + bi * Dout;
                for (std::int64_t o = 0; o < Dout; ++o)
                    detail::axpy(gr[o], xr, w->grad.data() + o * Din, Din);
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t bi = 0; bi < B; ++bi)
                for (std::int64_t o = 0; o < Dout; ++o) b->grad[o] += g[bi * Dout + o];
        }
    });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, Dims2 stride, Dims2 pad) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 4) throw DimensionError("conv2d: expected [B,C,H,W] input, got " + shape_str(xs));
    if (ws.size() != 4) throw DimensionError("conv2d: expected [F,C,kh,kw] weight, got " + shape_str(ws));
    const std::int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::int64_t F = ws[0], KH = ws[2], KW = ws[3];
    if (ws[1] != C)
        throw DimensionError("conv2d: input has " + std::to_string(C) + " channels but weight expects " +
                             std::to_string(ws[1]));
    if (b->value.numel() != F) throw DimensionError("conv2d: bias length != filter count");
    const auto [sh, sw] = stride;
    const auto [ph, pw] = pad;
    const std::int64_t Ho = detail::conv_extent(H, KH, sh, ph, "conv2d");
    const std::int64_t Wo = detail::conv_extent(W, KW, sw, pw, "conv2d");

    TensorT<T> out({B, F, Ho, Wo});
    parallel_for(B * F, [&](std::int64_t n) {
        const std::int64_t bi = n / F, f = n % F;
        T* ob = out.data() + n * Ho * Wo;
        std::fill(ob, ob + Ho * Wo, b->value[f]);
        for (std::int64_t c = 0; c < C; ++c) {
            const T* xc = x->value.data() + (bi * C + c) * H * W;
            const T* wc = w->value.data() + (f * C + c) * KH * KW;
            for (std::int64_t kh = 0; kh < KH; ++kh)
                for (std::int64_t kw = 0; kw < KW; ++kw) {
                    const T wv = wc[kh * KW + kw];
                    if (wv == T(0)) continue;
                    for (std::int64_t oh = 0; oh < Ho; ++oh) {
                        const std::int64_t ih = oh * sh + kh - ph;
                        if (ih < 0 || ih >= H) continue;
                        const T* xr = xc + ih * W;
                        T* orow = ob + oh * Wo;
                        if (sw == 1) {
                            const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                            const std::int64_t hi = std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                            if (lo <= hi) detail::axpy(wv, xr + lo + kw - pw, orow + lo, hi - lo + 1);
                        } else {
                            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                const std::int64_t iw = ow * sw + kw - pw;
                                if (iw >= 0 && iw < W) orow[ow] += wv * xr[iw];
                            }
                        }
                    }
                }
        }
    });

    auto bwd = [x, w, b, B, C, H, W, F, KH, KW, sh, sw, ph, pw, Ho, Wo](NodeT<T>& self) {
        const TensorT<T>& g = self.grad;
        if (x->requires_grad) {
            x->ensure_grad();
            parallel_for(B, [&](std::int64_t bi) {
                for (std::int64_t f = 0; f < F; ++f) {
                    const T* gb = g.data() + (bi * F + f) * Ho * Wo;
                    for (std::int64_t c = 0; c < C; ++c) {
                        T* gx = x->grad.data() + (bi * C + c) * H * W;
                        const T* wc = w->value.data() + (f * C + c) * KH * KW;
                        for (std::int64_t kh = 0; kh < KH; ++kh)
                            for (std::int64_t kw = 0; kw < KW; ++kw) {
                                const T wv = wc[kh * KW + kw];
                                if (wv == T(0)) continue;
                                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                    const std::int64_t ih = oh * sh + kh - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    const T* gr = gb + oh * Wo;
                                    T* xr = gx + ih * W;
                                    if (sw == 1) {
                                        const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                                        const std::int64_t hi =
                                            std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                                        if (lo <= hi)
                                            detail::axpy(wv, gr + lo, xr + lo + kw - pw, hi - lo + 1);
                                    } else {
                                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                            const std::int64_t iw = ow * sw + kw - pw;
                                            if (iw >= 0 && iw < W) xr[iw] += wv * gr[ow];
                                        }
                                    }
                                }
                            }
                    }
                }
            });
        }
        if (w->requires_grad) {
            w->ensure_grad();
            parallel_for(F, [&](std::int64_t f) {
                for (std::int64_t c = 0; c < C; ++c) {
                    T* gw = w->grad.data() + (f * C + c) * KH * KW;
                    for (std::int64_t kh = 0; kh < KH; ++kh)
                        for (std::int64_t kw = 0; kw < KW; ++kw) {
                            T acc = T(0);
                            for (std::int64_t bi = 0; bi < B; ++bi) {
                                const T* gb = g.data() + (bi * F + f) * Ho * Wo;
                                const T* xc = x->value.data() + (bi * C + c) * H * W;
                                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                    const std::int64_t ih = oh * sh + kh - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    if (sw == 1) {
                                        const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                                        const std::int64_t hi =
                                            std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                                        if (lo <= hi)
                                            acc += detail::dot(gb + oh * Wo + lo,
                                                               xc + ih * W + lo + kw - pw, hi - lo + 1);
                                    } else {
                                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                            const std::int64_t iw = ow * sw + kw - pw;
                                            if (iw >= 0 && iw < W)
                                                acc += gb[oh * Wo + ow] * xc[ih * W + iw];
                                        }
                                    }
                                }
                            }
                            gw[kh * KW + kw] += acc;
                        }
                }
            });
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t bi = 0; bi < B; ++bi)
                for (std::int64_t f = 0; f < F; ++f) {
                    const T* gb = g.data() + (bi * F + f) * Ho * Wo;
                    T acc = T(0);
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gb[i];
                    b->grad[f] += acc;
                }
        }
    };
    return detail::make_node<T>(std::move(out), {x, w, b}, "conv2d", std::move(bwd));
}

template <class T>
VarT<T> conv3d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, Dims3 stride, Dims3 pad) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 5)
        throw DimensionError("conv3d: expected [B,C,T,H,W] input, got " + shape_str(xs));
    if (ws.size() != 5)
        throw DimensionError("conv3d: expected [F,C,kt,kh,kw] weight, got " + shape_str(ws));
    const std::int64_t B = xs[0], C = xs[1], Ti = xs[2], H = xs[3], W = xs[4];
    const std::int64_t F = ws[0], KT = ws[2], KH = ws[3], KW = ws[4];
    if (ws[1] != C)
        throw DimensionError("conv3d: input has " + std::to_string(C) + " channels but weight expects " +
                             std::to_string(ws[1]));
    if (b->value.numel() != F) throw DimensionError("conv3d: bias length != filter count");
    const auto [st, sh, sw] = stride;
    const auto [pt, ph, pw] = pad;
    const std::int64_t To = detail::conv_extent(Ti, KT, st, pt, "conv3d");
    const std::int64_t Ho = detail::conv_extent(H, KH, sh, ph, "conv3d");
    const std::int64_t Wo = detail::conv_extent(W, KW, sw, pw, "conv3d");

    TensorT<T> out({B, F, To, Ho, Wo});
    parallel_for(B * F, [&](std::int64_t n) {
        const std::int64_t bi = n / F, f = n % F;
        T* ob = out.data() + n * To * Ho * Wo;
        std::fill(ob, ob + To * Ho * Wo, b->value[f]);
        for (std::int64_t c = 0; c < C; ++c) {
            const T* xc = x->value.data() + (bi * C + c) * Ti * H * W;
            const T* wc = w->value.data() + (f * C + c) * KT * KH * KW;
            for (std::int64_t kt = 0; kt < KT; ++kt)
                for (std::int64_t kh = 0; kh < KH; ++kh)
                    for (std::int64_t kw = 0; kw < KW; ++kw) {
                        const T wv = wc[(kt * KH + kh) * KW + kw];
                        if (wv == T(0)) continue;
                        for (std::int64_t ot = 0; ot < To; ++ot) {
                            const std::int64_t it = ot * st + kt - pt;
                            if (it < 0 || it >= Ti) continue;
                            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                const std::int64_t ih = oh * sh + kh - ph;
                                if (ih < 0 || ih >= H) continue;
                                const T* xr = xc + (it * H + ih) * W;
                                T* orow = ob + (ot * Ho + oh) * Wo;
                                if (sw == 1) {
                                    const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                                    const std::int64_t hi = std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                                    if (lo <= hi)
                                        detail::axpy(wv, xr + lo + kw - pw, orow + lo, hi - lo + 1);
                                } else {
                                    for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                        const std::int64_t iw = ow * sw + kw - pw;
                                        if (iw >= 0 && iw < W) orow[ow] += wv * xr[iw];
                                    }
                                }
                            }
                        }
                    }
        }
    });

    auto bwd = [x, w, b, B, C, Ti, H, W, F, KT, KH, KW, st, sh, sw, pt, ph, pw, To, Ho,
                Wo](NodeT<T>& self) {
        const TensorT<T>& g = self.grad;
        if (x->requires_grad) {
            x->ensure_grad();
            parallel_for(B, [&](std::int64_t bi) {
                for (std::int64_t f = 0; f < F; ++f) {
                    const T* gb = g.data() + (bi * F + f) * To * Ho * Wo;
                    for (std::int64_t c = 0; c < C; ++c) {
                        T* gx = x->grad.data() + (bi * C + c) * Ti * H * W;
                        const T* wc = w->value.data() + (f * C + c) * KT * KH * KW;
                        for (std::int64_t kt = 0; kt < KT; ++kt)
                            for (std::int64_t kh = 0; kh < KH; ++kh)
                                for (std::int64_t kw = 0; kw < KW; ++kw) {
                                    const T wv = wc[(kt * KH + kh) * KW + kw];
                                    if (wv == T(0)) continue;
                                    for (std::int64_t ot = 0; ot < To; ++ot) {
                                        const std::int64_t it = ot * st + kt - pt;
                                        if (it < 0 || it >= Ti) continue;
                                        for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                            const std::int64_t ih = oh * sh + kh - ph;
                                            if (ih < 0 || ih >= H) continue;
                                            const T* gr = gb + (ot * Ho + oh) * Wo;
                                            T* xr = gx + (it * H + ih) * W;
                                            if (sw == 1) {
                                                const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                                                const std::int64_t hi =
                                                    std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                                                if (lo <= hi)
                                                    detail::axpy(wv, gr + lo, xr + lo + kw - pw,
                                                                 hi - lo + 1);
                                            } else {
                                                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                                    const std::int64_t iw = ow * sw + kw - pw;
                                                    if (iw >= 0 && iw < W) xr[iw] += wv * gr[ow];
                                                }
                                            }
                                        }
                                    }
                                }
                    }
                }
            });
        }
        if (w->requires_grad) {
            w->ensure_grad();
            parallel_for(F, [&](std::int64_t f) {
                for (std::int64_t c = 0; c < C; ++c) {
                    T* gw = w->grad.data() + (f * C + c) * KT * KH * KW;
                    for (std::int64_t kt = 0; kt < KT; ++kt)
                        for (std::int64_t kh = 0; kh < KH; ++kh)
                            for (std::int64_t kw = 0; kw < KW; ++kw) {
                                T acc = T(0);
                                for (std::int64_t bi = 0; bi < B; ++bi) {
                                    const T* gb = g.data() + (bi * F + f) * To * Ho * Wo;
                                    const T* xc = x->value.data() + (bi * C + c) * Ti * H * W;
                                    for (std::int64_t ot = 0; ot < To; ++ot) {
                                        const std::int64_t it = ot * st + kt - pt;
                                        if (it < 0 || it >= Ti) continue;
                                        for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                            const std::int64_t ih = oh * sh + kh - ph;
                                            if (ih < 0 || ih >= H) continue;
                                            const T* gr = gb + (ot * Ho + oh) * Wo;
                                            const T* xr = xc + (it * H + ih) * W;
                                            if (sw == 1) {
                                                const std::int64_t lo = std::max<std::int64_t>(0, pw - kw);
                                                const std::int64_t hi =
                                                    std::min<std::int64_t>(Wo - 1, W - 1 - kw + pw);
                                                if (lo <= hi)
                                                    acc += detail::dot(gr + lo, xr + lo + kw - pw,
                                                                       hi - lo + 1);
                                            } else {
                                                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                                    const std::int64_t iw = ow * sw + kw - pw;
                                                    if (iw >= 0 && iw < W) acc += gr[ow] * xr[iw];
                                                }
                                            }
                                        }
                                    }
                                }
                                gw[(kt * KH + kh) * KW + kw] += acc;
                            }
                }
            });
        }
        if (b->requires_grad) {
            b->ensure_grad();
            const std::int64_t plane = To * Ho * Wo;
            for (std::int64_t bi = 0; bi < B; ++bi)
                for (std::int64_t f = 0; f < F; ++f) {
                    const T* gb = g.data() + (bi * F + f) * plane;
                    T acc = T(0);
                    for (std::int64_t i = 0; i < plane; ++i) acc += gb[i];
                    b->grad[f] += acc;
                }
        }
    };
    return detail::make_node<T>(std::move(out), {x, w, b}, "conv3d", std::move(bwd));
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <class T>
VarT<T> maxpool3d(const VarT<T>& x, Dims3 kernel, Dims3 stride) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5)
        throw DimensionError("maxpool3d: expected [B,C,T,H,W] input, got " + shape_str(xs));
    const std::int64_t B = xs[0], C = xs[1], Ti = xs[2], H = xs[3], W = xs[4];
    const auto [kt, kh, kw] = kernel;
    const auto [st, sh, sw] = stride;
    const std::int64_t To = detail::conv_extent(Ti, kt, st, 0, "maxpool3d");
    const std::int64_t Ho = detail::conv_extent(H, kh, sh, 0, "maxpool3d");
    const std::int64_t Wo = detail::conv_extent(W, kw, sw, 0, "maxpool3d");

    TensorT<T> out({B, C, To, Ho, Wo});
    // argmax per output cell; ties resolve to the first window cell in row-major scan
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(out.numel()));
    parallel_for(B * C, [&](std::int64_t bc) {
        const T* xc = x->value.data() + bc * Ti * H * W;
        T* oc = out.data() + bc * To * Ho * Wo;
        std::int64_t* am = argmax->data() + bc * To * Ho * Wo;
        std::int64_t oi = 0;
        for (std::int64_t ot = 0; ot < To; ++ot)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (std::int64_t dt = 0; dt < kt; ++dt)
                        for (std::int64_t dh = 0; dh < kh; ++dh)
                            for (std::int64_t dw = 0; dw < kw; ++dw) {
                                const std::int64_t idx =
                                    ((ot * st + dt) * H + oh * sh + dh) * W + ow * sw + dw;
                                if (xc[idx] > best) {
                                    best = xc[idx];
                                    best_idx = idx;
                                }
                            }
                    oc[oi] = best;
                    am[oi] = bc * Ti * H * W + best_idx;
                }
    });
    return detail::make_node<T>(std::move(out), {x}, "maxpool3d", [x, argmax](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            x->grad[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    });
}

// Collapses the full remaining [T,H,W] volume to a per-channel mean; the kernel
// argument must match the input extents exactly.
template <class T>
VarT<T> global_avgpool3d(const VarT<T>& x, Dims3 kernel) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5)
        throw DimensionError("global_avgpool3d: expected [B,C,T,H,W] input, got " + shape_str(xs));
    const std::int64_t B = xs[0], C = xs[1];
    if (kernel[0] != xs[2] || kernel[1] != xs[3] || kernel[2] != xs[4])
        throw DimensionError("global_avgpool3d: kernel " + std::to_string(kernel[0]) + "x" +
                             std::to_string(kernel[1]) + "x" + std::to_string(kernel[2]) +
                             " does not match input volume " + shape_str(xs));
    const std::int64_t V = xs[2] * xs[3] * xs[4];
    TensorT<T> out({B, C});
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const T* xc = x->value.data() + bc * V;
        T acc = T(0);
        for (std::int64_t i = 0; i < V; ++i) acc += xc[i];
        out[bc] = acc / static_cast<T>(V);
    }
    return detail::make_node<T>(std::move(out), {x}, "global_avgpool3d", [x, V](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T inv = T(1) / static_cast<T>(V);
        for (std::int64_t bc = 0; bc < self.grad.numel(); ++bc) {
            const T g = self.grad[bc] * inv;
            T* dst = x->grad.data() + bc * V;
            for (std::int64_t i = 0; i < V; ++i) dst[i] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// batch normalization (channel axis = 1, reduced over every other axis)
// ---------------------------------------------------------------------------

template <class T>
struct BatchNormOut {
    VarT<T> y;
    TensorT<T> batch_mean;  // per channel; train mode only
    TensorT<T> batch_var;   // biased; train mode only
};

template <class T>
BatchNormOut<T> batchnorm_train(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                                T eps) {
    const Shape& xs = x->value.shape();
    if (xs.size() < 2) throw DimensionError("batchnorm: input rank must be >= 2");
    const std::int64_t Bn = xs[0], C = xs[1];
    const std::int64_t R = x->value.numel() / (Bn * C);
    const std::int64_t M = Bn * R;
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw DimensionError("batchnorm: gamma/beta length != channel count " + std::to_string(C));
    if (eps <= T(0)) throw InputError("batchnorm: epsilon must be positive");

    TensorT<T> mean({C}), var({C});
    for (std::int64_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (std::int64_t b = 0; b < Bn; ++b) {
            const T* p = x->value.data() + (b * C + c) * R;
            for (std::int64_t r = 0; r < R; ++r) acc += p[r];
        }
        mean[c] = acc / static_cast<T>(M);
        T v = T(0);
        for (std::int64_t b = 0; b < Bn; ++b) {
            const T* p = x->value.data() + (b * C + c) * R;
            for (std::int64_t r = 0; r < R; ++r) {
                const T d = p[r] - mean[c];
                v += d * d;
            }
        }
        var[c] = v / static_cast<T>(M);
    }

    auto xhat = std::make_shared<TensorT<T>>(xs);
    TensorT<T> rstd({C});
    for (std::int64_t c = 0; c < C; ++c) rstd[c] = T(1) / std::sqrt(var[c] + eps);
    TensorT<T> out(xs);
    for (std::int64_t b = 0; b < Bn; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const T* p = x->value.data() + (b * C + c) * R;
            T* xh = xhat->data() + (b * C + c) * R;
            T* o = out.data() + (b * C + c) * R;
            const T mu = mean[c], rs = rstd[c], ga = gamma->value[c], be = beta->value[c];
            for (std::int64_t r = 0; r < R; ++r) {
                xh[r] = (p[r] - mu) * rs;
                o[r] = ga * xh[r] + be;
            }
        }

    auto rstd_ctx = std::make_shared<TensorT<T>>(std::move(rstd));
    auto y = detail::make_node<T>(
        std::move(out), {x, gamma, beta}, "batchnorm",
        [x, gamma, beta, xhat, rstd_ctx, Bn, C, R, M](NodeT<T>& self) {
            const TensorT<T>& g = self.grad;
            // per-channel reductions shared by all three gradients
            TensorT<T> sum_g({C}), sum_gx({C});
            for (std::int64_t b = 0; b < Bn; ++b)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* gr = g.data() + (b * C + c) * R;
                    const T* xh = xhat->data() + (b * C + c) * R;
                    T a = T(0), bx = T(0);
                    for (std::int64_t r = 0; r < R; ++r) {
                        a += gr[r];
                        bx += gr[r] * xh[r];
                    }
                    sum_g[c] += a;
                    sum_gx[c] += bx;
                }
            if (beta->requires_grad) {
                beta->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) beta->grad[c] += sum_g[c];
            }
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) gamma->grad[c] += sum_gx[c];
            }
            if (x->requires_grad) {
                x->ensure_grad();
                const T invM = T(1) / static_cast<T>(M);
                for (std::int64_t b = 0; b < Bn; ++b)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* gr = g.data() + (b * C + c) * R;
                        const T* xh = xhat->data() + (b * C + c) * R;
                        T* gx = x->grad.data() + (b * C + c) * R;
                        const T k = gamma->value[c] * (*rstd_ctx)[c] * invM;
                        const T sg = sum_g[c], sgx = sum_gx[c];
                        for (std::int64_t r = 0; r < R; ++r)
                            gx[r] += k * (static_cast<T>(M) * gr[r] - sg - xh[r] * sgx);
                    }
            }
        });
    return {y, std::move(mean), std::move(var)};
}

template <class T>
VarT<T> batchnorm_eval(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                       const TensorT<T>& running_mean, const TensorT<T>& running_var, T eps) {
    const Shape& xs = x->value.shape();
    if (xs.size() < 2) throw DimensionError("batchnorm: input rank must be >= 2");
    const std::int64_t Bn = xs[0], C = xs[1];
    const std::int64_t R = x->value.numel() / (Bn * C);
    if (gamma->value.numel() != C || beta->value.numel() != C || running_mean.numel() != C ||
        running_var.numel() != C)
        throw DimensionError("batchnorm: parameter length != channel count " + std::to_string(C));

    auto xhat = std::make_shared<TensorT<T>>(xs);
    auto rstd = std::make_shared<TensorT<T>>(Shape{C});
    for (std::int64_t c = 0; c < C; ++c) (*rstd)[c] = T(1) / std::sqrt(running_var[c] + eps);
    TensorT<T> out(xs);
    for (std::int64_t b = 0; b < Bn; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const T* p = x->value.data() + (b * C + c) * R;
            T* xh = xhat->data() + (b * C + c) * R;
            T* o = out.data() + (b * C + c) * R;
            const T mu = running_mean[c], rs = (*rstd)[c];
            const T ga = gamma->value[c], be = beta->value[c];
            for (std::int64_t r = 0; r < R; ++r) {
                xh[r] = (p[r] - mu) * rs;
                o[r] = ga * xh[r] + be;
            }
        }
    return detail::make_node<T>(std::move(out), {x, gamma, beta}, "batchnorm_eval",
                                [x, gamma, beta, xhat, rstd, Bn, C, R](NodeT<T>& self) {
        const TensorT<T>& g = self.grad;
        for (std::int64_t b = 0; b < Bn; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* gr = g.data() + (b * C + c) * R;
                const T* xh = xhat->data() + (b * C + c) * R;
                if (x->requires_grad) {
                    x->ensure_grad();
                    T* gx = x->grad.data() + (b * C + c) * R;
                    const T k = gamma->value[c] * (*rstd)[c];
                    for (std::int64_t r = 0; r < R; ++r) gx[r] += k * gr[r];
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    T acc = T(0);
                    for (std::int64_t r = 0; r < R; ++r) acc += gr[r] * xh[r];
                    gamma->grad[c] += acc;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    T acc = T(0);
                    for (std::int64_t r = 0; r < R; ++r) acc += gr[r];
                    beta->grad[c] += acc;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// dropout (inverted: survivors pre-scaled so eval is the identity)
// ---------------------------------------------------------------------------

// Draws a {0, 1/(1-rate)} mask; kept separate from apply_mask so replay and
// gradient checking can pin the mask.
template <class T>
TensorT<T> dropout_mask(const Shape& shape, T rate, Rng& rng) {
    if (rate < T(0) || rate >= T(1)) throw InputError("dropout: rate must be in [0,1)");
    TensorT<T> mask(shape);
    const T keep_scale = T(1) / (T(1) - rate);
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = rng.next_double() < static_cast<double>(rate) ? T(0) : keep_scale;
    return mask;
}

template <class T>
VarT<T> apply_mask(const VarT<T>& x, TensorT<T> mask) {
    if (!x->value.same_shape(mask))
        throw DimensionError("apply_mask: mask shape mismatch");
    auto m = std::make_shared<TensorT<T>>(std::move(mask));
    TensorT<T> out(x->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * (*m)[i];
    return detail::make_node<T>(std::move(out), {x}, "dropout", [x, m](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            x->grad[i] += self.grad[i] * (*m)[i];
    });
}

template <class T>
VarT<T> dropout(const VarT<T>& x, T rate, bool training, Rng* rng) {
    if (rate < T(0) || rate >= T(1)) throw InputError("dropout: rate must be in [0,1)");
    if (!training || rate == T(0)) return x;
    if (!rng) throw StateError("dropout: training mode requires an rng stream");
    return apply_mask(x, dropout_mask<T>(x->value.shape(), rate, *rng));
}

// ---------------------------------------------------------------------------
// softmax / cross entropy
// ---------------------------------------------------------------------------

// Row softmax on plain values (classification output; no graph).
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw DimensionError("softmax: expected [B,K] logits");
    const std::int64_t B = s[0], K = s[1];
    TensorT<T> probs(s);
    for (std::int64_t b = 0; b < B; ++b) {
        const T* lr = logits.data() + b * K;
        T* pr = probs.data() + b * K;
        T mx = lr[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, lr[k]);
        T z = T(0);
        for (std::int64_t k = 0; k < K; ++k) {
            pr[k] = std::exp(lr[k] - mx);
            z += pr[k];
        }
        for (std::int64_t k = 0; k < K; ++k) pr[k] /= z;
    }
    return probs;
}

template <class T>
struct SoftmaxLoss {
    VarT<T> loss;       // scalar mean negative log-likelihood
    TensorT<T> probs;   // [B,K] per-example probabilities
};

template <class T>
SoftmaxLoss<T> softmax_cross_entropy(const VarT<T>& logits, const std::vector<int>& labels) {
    const Shape& s = logits->value.shape();
    if (s.size() != 2) throw DimensionError("softmax_cross_entropy: expected [B,K] logits");
    const std::int64_t B = s[0], K = s[1];
    if (static_cast<std::int64_t>(labels.size()) != B)
        throw InputError("softmax_cross_entropy: label count != batch size");
    for (int y : labels)
        if (y < 0 || y >= K)
            throw InputError("softmax_cross_entropy: label " + std::to_string(y) +
                             " out of range [0," + std::to_string(K) + ")");

    TensorT<T> probs = softmax_rows(logits->value);
    T loss_acc = T(0);
    for (std::int64_t b = 0; b < B; ++b) {
        const T* lr = logits->value.data() + b * K;
        T mx = lr[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, lr[k]);
        T z = T(0);
        for (std::int64_t k = 0; k < K; ++k) z += std::exp(lr[k] - mx);
        // -log p = log(sum exp(l - mx)) - (l_y - mx)
        loss_acc += std::log(z) - (lr[labels[static_cast<std::size_t>(b)]] - mx);
    }
    TensorT<T> lv({1});
    lv[0] = loss_acc / static_cast<T>(B);
    if (!lv.all_finite()) throw StateError("softmax_cross_entropy: non-finite loss");

    auto probs_ctx = std::make_shared<TensorT<T>>(probs);
    auto labels_ctx = std::make_shared<std::vector<int>>(labels);
    auto loss = detail::make_node<T>(std::move(lv), {logits}, "softmax_cross_entropy",
                                     [logits, probs_ctx, labels_ctx, B, K](NodeT<T>& self) {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (std::int64_t b = 0; b < B; ++b) {
            const T* pr = probs_ctx->data() + b * K;
            T* gl = logits->grad.data() + b * K;
            const int y = (*labels_ctx)[static_cast<std::size_t>(b)];
            for (std::int64_t k = 0; k < K; ++k)
                gl[k] += g * (pr[k] - (k == y ? T(1) : T(0)));
        }
    });
    return {loss, std::move(probs)};
}

// ---------------------------------------------------------------------------
// nearest-neighbor resize over the [T,H,W] axes of a rank-5 volume
// ---------------------------------------------------------------------------

template <class T>
VarT<T> resize_nearest(const VarT<T>& x, Dims3 out_extents) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5)
        throw DimensionError("resize_nearest: expected [B,C,T,H,W] input, got " + shape_str(xs));
    const std::int64_t B = xs[0], C = xs[1], Ti = xs[2], H = xs[3], W = xs[4];
    const auto [To, Ho, Wo] = out_extents;
    if (To <= 0 || Ho <= 0 || Wo <= 0) throw InputError("resize_nearest: non-positive extents");
    TensorT<T> out({B, C, To, Ho, Wo});
    auto src_of = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(To * Ho * Wo));
    {
        std::size_t oi = 0;
        for (std::int64_t ot = 0; ot < To; ++ot)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow, ++oi)
                    (*src_of)[oi] = ((ot * Ti / To) * H + oh * H / Ho) * W + ow * W / Wo;
    }
    const std::int64_t Vo = To * Ho * Wo, Vi = Ti * H * W;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = x->value.data() + bc * Vi;
        T* dst = out.data() + bc * Vo;
        for (std::int64_t i = 0; i < Vo; ++i) dst[i] = src[(*src_of)[static_cast<std::size_t>(i)]];
    }
    return detail::make_node<T>(std::move(out), {x}, "resize_nearest",
                                [x, src_of, Vo, Vi](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const std::int64_t BC = self.grad.numel() / Vo;
        for (std::int64_t bc = 0; bc < BC; ++bc) {
            const T* g = self.grad.data() + bc * Vo;
            T* dst = x->grad.data() + bc * Vi;
            for (std::int64_t i = 0; i < Vo; ++i) dst[(*src_of)[static_cast<std::size_t>(i)]] += g[i];
        }
    });
}

}  // namespace futh::ops
