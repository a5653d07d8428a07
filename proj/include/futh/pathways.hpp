#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "futh/nn.hpp"

namespace futh {

// ---------------------------------------------------------------------------
// holistic pathway: 3D conv trunk -> global average pool -> g
// ---------------------------------------------------------------------------

struct Conv3dBlockSpec {
    std::int64_t out_ch;
    ops::Dims3 kernel, stride, pad;
    bool pool = false;
    ops::Dims3 pool_kernel{1, 1, 1}, pool_stride{1, 1, 1};
};

struct HolisticSpec {
    std::int64_t in_channels = 3;
    std::vector<Conv3dBlockSpec> blocks;

    std::int64_t d_g() const {
        if (blocks.empty()) throw ConfigError("holistic pathway needs at least one block");
        return blocks.back().out_ch;
    }

    // The first two pooling layers must keep temporal stride 1 with a 1x3x3
    // window — the early-pool structural rule.
    void validate() const {
        if (blocks.empty()) throw ConfigError("holistic pathway needs at least one block");
        int pool_idx = 0;
        for (const auto& b : blocks) {
            if (b.out_ch <= 0) throw ConfigError("holistic block width must be positive");
            if (!b.pool) continue;
            ++pool_idx;
            if (pool_idx <= 2) {
                const bool ok = b.pool_kernel == ops::Dims3{1, 3, 3} &&
                                b.pool_stride == ops::Dims3{1, 2, 2};
                if (!ok)
                    throw ConfigError(
                        "holistic pool " + std::to_string(pool_idx) +
                        " must use a 1x3x3 window with 1x2x2 stride (early pools keep temporal "
                        "extent)");
            }
        }
    }
};

template <class T>
class HolisticPathway {
public:
    template <class U>
    struct Volumes {
        VarT<U> g;            // [B, D_g]
        VarT<U> last_volume;  // [B, C_last, T', H', W'] before the global pool
    };

    HolisticPathway(nn::ParamStore<T>& ps, const HolisticSpec& spec, Rng& rng,
                    const std::string& group = "holistic")
        : spec_(spec) {
        spec_.validate();
        std::int64_t in_ch = spec_.in_channels;
        for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
            const auto& b = spec_.blocks[i];
            const std::string name = group + ".block" + std::to_string(i + 1);
            convs_.emplace_back(ps, name + ".conv", group, b.out_ch, in_ch, b.kernel, b.stride,
                                b.pad, rng);
            bns_.emplace_back(ps, name + ".bn", group, b.out_ch);
            in_ch = b.out_ch;
        }
    }

    std::int64_t d_g() const { return spec_.d_g(); }

    Volumes<T> forward_full(const VarT<T>& clip, nn::PassCtx& ctx) {
        if (clip->value.rank() != 5)
            throw DimensionError("holistic pathway: expected [B,C,T,H,W] clip, got " +
                                 shape_str(clip->value.shape()));
        VarT<T> x = clip;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            const std::string where = "holistic block " + std::to_string(i + 1);
            try {
                x = convs_[i].forward(x);
                x = bns_[i].forward(x, ctx);
                x = ops::relu(x);
                const auto& b = spec_.blocks[i];
                if (b.pool) x = ops::maxpool3d(x, b.pool_kernel, b.pool_stride);
            } catch (const DimensionError& e) {
                throw DimensionError(where + ": " + e.what());
            }
        }
        const Shape& s = x->value.shape();
        auto g = ops::global_avgpool3d(x, {s[2], s[3], s[4]});
        return {g, x};
    }

    VarT<T> forward(const VarT<T>& clip, nn::PassCtx& ctx) { return forward_full(clip, ctx).g; }

private:
    HolisticSpec spec_;
    std::vector<nn::Conv3dLayer<T>> convs_;
    std::vector<nn::BatchNormLayer<T>> bns_;
};

// ---------------------------------------------------------------------------
// frame feature extractor: shared 2D trunk applied to every frame
// ---------------------------------------------------------------------------

struct Conv2dBlockSpec {
    std::int64_t out_ch;
    ops::Dims2 kernel, stride, pad;
    bool pool = false;
    ops::Dims2 pool_kernel{1, 1}, pool_stride{1, 1};
};

enum class ExtractorHead {
    flatten_linear,  // flatten the final map and project to d_f (keeps position info)
    global_avg,      // per-channel mean; d_f must equal the last block width
};

struct ExtractorSpec {
    std::int64_t in_channels = 3;
    std::vector<Conv2dBlockSpec> blocks;
    ExtractorHead head = ExtractorHead::flatten_linear;
    std::int64_t d_f = 32;

    void validate() const {
        if (blocks.empty()) throw ConfigError("frame extractor needs at least one block");
        if (d_f <= 0) throw ConfigError("frame feature width must be positive");
        if (head == ExtractorHead::global_avg && d_f != blocks.back().out_ch)
            throw ConfigError("global-average extractor head requires d_f == last block width");
    }
};

template <class T>
class FrameFeatureExtractor {
public:
    template <class U>
    struct FrameOutputs {
        VarT<U> features;  // [B, T, D_f]
        VarT<U> volume;    // [B, C_last, T, H', W'], per-frame maps stacked on time
    };

    FrameFeatureExtractor(nn::ParamStore<T>& ps, const ExtractorSpec& spec, Shape frame_hw,
                          Rng& rng, const std::string& group = "relation_ext")
        : spec_(spec) {
        spec_.validate();
        if (frame_hw.size() != 2) throw ConfigError("frame extractor: expected [H,W] frame extents");
        std::int64_t in_ch = spec_.in_channels;
        std::int64_t h = frame_hw[0], w = frame_hw[1];
        for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
            const auto& b = spec_.blocks[i];
            const std::string name = group + ".block" + std::to_string(i + 1);
            convs_.emplace_back(ps, name + ".conv", group, b.out_ch, in_ch, b.kernel, b.stride,
                                b.pad, rng);
            bns_.emplace_back(ps, name + ".bn", group, b.out_ch);
            h = detail_extent(h, b.kernel[0], b.stride[0], b.pad[0], "frame extractor height");
            w = detail_extent(w, b.kernel[1], b.stride[1], b.pad[1], "frame extractor width");
            if (b.pool) {
                h = detail_extent(h, b.pool_kernel[0], b.pool_stride[0], 0, "frame extractor pool");
                w = detail_extent(w, b.pool_kernel[1], b.pool_stride[1], 0, "frame extractor pool");
            }
            in_ch = b.out_ch;
        }
        out_h_ = h;
        out_w_ = w;
        if (spec_.head == ExtractorHead::flatten_linear)
            proj_.emplace(ps, group + ".proj", group, spec_.d_f, in_ch * h * w, rng, 1.0);
    }

    std::int64_t d_f() const { return spec_.d_f; }

    FrameOutputs<T> forward_full(const VarT<T>& clip, nn::PassCtx& ctx) {
        if (clip->value.rank() != 5)
            throw DimensionError("frame extractor: expected [B,C,T,H,W] clip, got " +
                                 shape_str(clip->value.shape()));
        const std::int64_t B = clip->value.dim(0), Tn = clip->value.dim(2);
        std::vector<VarT<T>> rows, maps;
        rows.reserve(static_cast<std::size_t>(Tn));
        maps.reserve(static_cast<std::size_t>(Tn));
        for (std::int64_t t = 0; t < Tn; ++t) {
            VarT<T> x = ops::take_frame(clip, t);
            for (std::size_t i = 0; i < convs_.size(); ++i) {
                const std::string where = "frame extractor block " + std::to_string(i + 1);
                try {
                    x = convs_[i].forward(x);
                    x = bns_[i].forward(x, ctx);
                    x = ops::relu(x);
                    const auto& b = spec_.blocks[i];
                    if (b.pool) {
                        // reuse the 3D pool on a singleton temporal axis
                        const Shape& s = x->value.shape();
                        x = ops::reshape(x, {s[0], s[1], 1, s[2], s[3]});
                        x = ops::maxpool3d(x, {1, b.pool_kernel[0], b.pool_kernel[1]},
                                           {1, b.pool_stride[0], b.pool_stride[1]});
                        const Shape& p = x->value.shape();
                        x = ops::reshape(x, {p[0], p[1], p[3], p[4]});
                    }
                } catch (const DimensionError& e) {
                    throw DimensionError(where + ": " + e.what());
                }
            }
            const Shape& ms = x->value.shape();
            maps.push_back(ops::reshape(x, {ms[0], ms[1], 1, ms[2], ms[3]}));
            VarT<T> f;
            if (spec_.head == ExtractorHead::flatten_linear) {
                f = proj_->forward(ops::reshape(x, {B, ms[1] * ms[2] * ms[3]}));
            } else {
                x = ops::reshape(x, {ms[0], ms[1], 1, ms[2], ms[3]});
                f = ops::global_avgpool3d(x, {1, ms[2], ms[3]});
            }
            rows.push_back(ops::reshape(f, {B, 1, spec_.d_f}));
        }
        return {ops::concat(rows, 1), ops::concat(maps, 2)};
    }

    VarT<T> forward(const VarT<T>& clip, nn::PassCtx& ctx) {
        return forward_full(clip, ctx).features;
    }

private:
    static std::int64_t detail_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                                      std::int64_t p, const char* what) {
        return ops::detail::conv_extent(in, k, s, p, what);
    }

    ExtractorSpec spec_;
    std::vector<nn::Conv2dLayer<T>> convs_;
    std::vector<nn::BatchNormLayer<T>> bns_;
    std::optional<nn::LinearLayer<T>> proj_;
    std::int64_t out_h_ = 0, out_w_ = 0;
};

// ---------------------------------------------------------------------------
// temporal relation block
// ---------------------------------------------------------------------------

// Ordered index tuple for an m-frame relation. Training draws m distinct
// frames uniformly and sorts them back into temporal order; eval picks the
// evenly spaced tuple round(k*(N-1)/(m-1)).
inline std::vector<std::int64_t> sample_tuple(std::int64_t n, std::int64_t m, bool training,
                                              Rng* rng) {
    if (m < 2 || m > n)
        throw InputError("sample_tuple: need 2 <= m <= N, got m=" + std::to_string(m) +
                         " N=" + std::to_string(n));
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(m));
    if (training) {
        if (!rng) throw StateError("sample_tuple: training mode requires an rng stream");
        std::vector<std::int64_t> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), std::int64_t{0});
        for (std::int64_t k = 0; k < m; ++k) {
            const auto j = static_cast<std::size_t>(k) +
                           static_cast<std::size_t>(rng->next_below(static_cast<std::uint64_t>(n - k)));
            std::swap(all[static_cast<std::size_t>(k)], all[j]);
            out.push_back(all[static_cast<std::size_t>(k)]);
        }
        std::sort(out.begin(), out.end());
    } else {
        for (std::int64_t k = 0; k < m; ++k)
            out.push_back(static_cast<std::int64_t>(
                std::llround(static_cast<double>(k) * static_cast<double>(n - 1) /
                             static_cast<double>(m - 1))));
    }
    return out;
}

// Two-layer MLP for scale m: (m*D_f -> D_r -> D_r), each layer BN + ReLU.
template <class T>
class RelationScaleMLP {
public:
    RelationScaleMLP(nn::ParamStore<T>& ps, std::int64_t m, std::int64_t d_f, std::int64_t d_r,
                     Rng& rng, const std::string& group = "relation_mlp")
        : m_(m),
          d_f_(d_f),
          fc1_(ps, group + ".m" + std::to_string(m) + ".fc1", group, d_r, m * d_f, rng,
               std::sqrt(2.0)),
          bn1_(ps, group + ".m" + std::to_string(m) + ".bn1", group, d_r),
          fc2_(ps, group + ".m" + std::to_string(m) + ".fc2", group, d_r, d_r, rng, std::sqrt(2.0)),
          bn2_(ps, group + ".m" + std::to_string(m) + ".bn2", group, d_r) {
        // Temporal-contrast tiling on every other fc1 row: the row applies one
        // random projection to all m slots, weighted by a centered time ramp,
        // so it responds to the tuple's feature velocity already at init. The
        // remaining rows keep the plain random init for diversity.
        auto& w = fc1_.w->value;
        const std::int64_t d_r_rows = w.dim(0);
        const double sr = std::sqrt(6.0 / (static_cast<double>(d_f) * static_cast<double>(m)));
        for (std::int64_t r = 0; r < d_r_rows; r += 2)
            for (std::int64_t j = 0; j < d_f; ++j) {
                const T w0 = static_cast<T>(sr * rng.normal());
                for (std::int64_t k = 0; k < m; ++k) {
                    const double ramp =
                        (2.0 * static_cast<double>(k) - static_cast<double>(m - 1)) /
                        static_cast<double>(m - 1);
                    w[r * (m_ * d_f_) + k * d_f_ + j] = static_cast<T>(ramp) * w0;
                }
            }
    }

    std::int64_t scale() const { return m_; }

    // features: [B,T,D_f]; tuple: strictly increasing frame indices of length m
    VarT<T> forward(const VarT<T>& features, const std::vector<std::int64_t>& tuple,
                    nn::PassCtx& ctx) {
        if (static_cast<std::int64_t>(tuple.size()) != m_)
            throw InputError("relation scale " + std::to_string(m_) + ": tuple has " +
                             std::to_string(tuple.size()) + " indices");
        if (features->value.rank() != 3 || features->value.dim(2) != d_f_)
            throw DimensionError("relation scale " + std::to_string(m_) +
                                 ": expected [B,T," + std::to_string(d_f_) + "] features, got " +
                                 shape_str(features->value.shape()));
        auto s_m = ops::gather_rows(features, tuple);
        auto h = ops::relu(bn1_.forward(fc1_.forward(s_m), ctx));
        return ops::relu(bn2_.forward(fc2_.forward(h), ctx));
    }

private:
    std::int64_t m_, d_f_;
    nn::LinearLayer<T> fc1_;
    nn::BatchNormLayer<T> bn1_;
    nn::LinearLayer<T> fc2_;
    nn::BatchNormLayer<T> bn2_;
};

// ---------------------------------------------------------------------------
// relation pathway: extractor + one MLP per scale m = 2..N -> bank l
// ---------------------------------------------------------------------------

struct RelationSpec {
    ExtractorSpec extractor;
    std::int64_t n_frames = 16;
    std::int64_t d_r = 16;
    std::int64_t tuples_per_scale = 1;  // training-time K; eval always uses one fixed tuple
    bool freeze_extractor_in_phase2 = false;

    std::int64_t bank_width() const { return d_r * (n_frames - 1); }

    void validate() const {
        extractor.validate();
        if (n_frames < 2) throw ConfigError("relation pathway needs at least 2 frames");
        if (d_r <= 0) throw ConfigError("relation width must be positive");
        if (tuples_per_scale < 1) throw ConfigError("tuples per scale must be >= 1");
    }
};

template <class T>
class RelationPathway {
public:
    RelationPathway(nn::ParamStore<T>& ps, const RelationSpec& spec, Shape frame_hw, Rng& rng)
        : spec_(spec), extractor_(ps, spec.extractor, std::move(frame_hw), rng, "relation_ext") {
        spec_.validate();
        for (std::int64_t m = 2; m <= spec_.n_frames; ++m)
            mlps_.emplace_back(ps, m, spec_.extractor.d_f, spec_.d_r, rng, "relation_mlp");
    }

    std::int64_t bank_width() const { return spec_.bank_width(); }
    std::int64_t n_frames() const { return spec_.n_frames; }
    const RelationSpec& spec() const { return spec_; }
    FrameFeatureExtractor<T>& extractor() { return extractor_; }
    std::vector<RelationScaleMLP<T>>& mlps() { return mlps_; }

    // Builds l from per-frame features; tuple_rng drives training-mode tuple
    // draws (and must be non-null when ctx.training).
    VarT<T> bank_from_features(const VarT<T>& features, nn::PassCtx& ctx) {
        if (static_cast<std::int64_t>(mlps_.size()) != spec_.n_frames - 1)
            throw ConfigError("relation pathway: expected one MLP per scale 2.." +
                              std::to_string(spec_.n_frames));
        if (features->value.rank() != 3)
            throw DimensionError("relation pathway: expected [B,T,D_f] features, got " +
                                 shape_str(features->value.shape()));
        if (features->value.dim(1) != spec_.n_frames)
            throw DimensionError("relation pathway: features carry " +
                                 std::to_string(features->value.dim(1)) + " frames, expected " +
                                 std::to_string(spec_.n_frames));
        std::vector<VarT<T>> segments;
        segments.reserve(mlps_.size());
        for (auto& mlp : mlps_) {
            const std::int64_t m = mlp.scale();
            if (ctx.training) {
                const std::int64_t K = spec_.tuples_per_scale;
                VarT<T> acc;
                for (std::int64_t k = 0; k < K; ++k) {
                    auto tuple = sample_tuple(spec_.n_frames, m, true, ctx.rng);
                    auto r = mlp.forward(features, tuple, ctx);
                    acc = acc ? ops::add(acc, r) : r;
                }
                segments.push_back(K == 1 ? acc : ops::scale(acc, T(1) / static_cast<T>(K)));
            } else {
                auto tuple = sample_tuple(spec_.n_frames, m, false, nullptr);
                segments.push_back(mlp.forward(features, tuple, ctx));
            }
        }
        return ops::concat(segments, 1);
    }

    VarT<T> forward(const VarT<T>& clip, nn::PassCtx& ctx) {
        return bank_from_features(extractor_.forward(clip, ctx), ctx);
    }

private:
    RelationSpec spec_;
    FrameFeatureExtractor<T> extractor_;
    std::vector<RelationScaleMLP<T>> mlps_;
};

}  // namespace futh
