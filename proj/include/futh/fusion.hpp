#pragma once

#include <optional>
#include <string>

#include "futh/nn.hpp"

namespace futh {

enum class FusionMethod {
    eq2,        // F1(l) (.) g + F2(l), then append
    max_fuse,   // elementwise max(g, proj(l))
    average,    // (g + proj(l)) / 2
    concat,     // [g, l]
    bilinear,   // low-rank bilinear pooling of g and proj(l)
    sum,        // g + proj(l)
    conv2d_fuse,  // shared 2D conv over each temporal slice of the stacked volumes
    conv3d_fuse,  // one 3D conv block over the stacked volumes
};

enum class AppendChoice { holistic, relation, none };

inline FusionMethod fusion_method_from_string(const std::string& s) {
    if (s == "eq2") return FusionMethod::eq2;
    if (s == "max") return FusionMethod::max_fuse;
    if (s == "average") return FusionMethod::average;
    if (s == "concat") return FusionMethod::concat;
    if (s == "bilinear") return FusionMethod::bilinear;
    if (s == "sum") return FusionMethod::sum;
    if (s == "conv2d") return FusionMethod::conv2d_fuse;
    if (s == "conv3d") return FusionMethod::conv3d_fuse;
    throw InputError("unknown fusion method '" + s +
                     "' (expected eq2|max|average|concat|bilinear|sum|conv2d|conv3d)");
}

inline std::string to_string(FusionMethod m) {
    switch (m) {
        case FusionMethod::eq2: return "eq2";
        case FusionMethod::max_fuse: return "max";
        case FusionMethod::average: return "average";
        case FusionMethod::concat: return "concat";
        case FusionMethod::bilinear: return "bilinear";
        case FusionMethod::sum: return "sum";
        case FusionMethod::conv2d_fuse: return "conv2d";
        case FusionMethod::conv3d_fuse: return "conv3d";
    }
    throw StateError("unreachable fusion method");
}

inline AppendChoice append_from_string(const std::string& s) {
    if (s == "holistic") return AppendChoice::holistic;
    if (s == "relation") return AppendChoice::relation;
    if (s == "none") return AppendChoice::none;
    throw InputError("unknown append choice '" + s + "' (expected holistic|relation|none)");
}

inline std::string to_string(AppendChoice a) {
    switch (a) {
        case AppendChoice::holistic: return "holistic";
        case AppendChoice::relation: return "relation";
        case AppendChoice::none: return "none";
    }
    throw StateError("unreachable append choice");
}

struct FusionSpec {
    FusionMethod method = FusionMethod::eq2;
    AppendChoice append = AppendChoice::holistic;  // meaningful for eq2 only
    double dropout = 0.5;
    std::int64_t bilinear_rank = 8;
    std::int64_t d_g = 0;
    std::int64_t d_l = 0;
    // channel widths of the two last pre-pool volumes (conv fusions only)
    std::int64_t holistic_channels = 0;
    std::int64_t relation_channels = 0;

    bool needs_volumes() const {
        return method == FusionMethod::conv2d_fuse || method == FusionMethod::conv3d_fuse;
    }

    std::int64_t fused_width() const {
        switch (method) {
            case FusionMethod::eq2:
                switch (append) {
                    case AppendChoice::holistic: return 2 * d_g;
                    case AppendChoice::relation: return d_g + d_l;
                    case AppendChoice::none: return d_g;
                }
                throw StateError("unreachable append choice");
            case FusionMethod::concat: return d_g + d_l;
            default: return d_g;
        }
    }

    void validate() const {
        if (d_g <= 0 || d_l <= 0) throw ConfigError("fusion: feature widths must be positive");
        if (bilinear_rank <= 0) throw ConfigError("fusion: bilinear rank must be positive");
        if (needs_volumes() && (holistic_channels <= 0 || relation_channels <= 0))
            throw ConfigError("fusion: conv fusion needs the pathway volume channel widths");
    }
};

template <class T>
class FusionModule {
public:
    FusionModule(nn::ParamStore<T>& ps, const FusionSpec& spec, Rng& rng,
                 const std::string& group = "fusion")
        : spec_(spec), drop_(static_cast<T>(spec.dropout)) {
        spec_.validate();
        switch (spec_.method) {
            case FusionMethod::eq2:
                f1_.emplace(ps, group + ".f1", group, spec_.d_g, spec_.d_l, rng, 1.0);
                f2_.emplace(ps, group + ".f2", group, spec_.d_g, spec_.d_l, rng, 1.0);
                break;
            case FusionMethod::max_fuse:
            case FusionMethod::average:
            case FusionMethod::sum:
                proj_.emplace(ps, group + ".proj", group, spec_.d_g, spec_.d_l, rng, 1.0);
                break;
            case FusionMethod::bilinear:
                proj_.emplace(ps, group + ".proj", group, spec_.d_g, spec_.d_l, rng, 1.0);
                bl_u_.emplace(ps, group + ".bl_u", group, spec_.bilinear_rank, spec_.d_g, rng, 1.0);
                bl_v_.emplace(ps, group + ".bl_v", group, spec_.bilinear_rank, spec_.d_g, rng, 1.0);
                bl_p_.emplace(ps, group + ".bl_p", group, spec_.d_g, spec_.bilinear_rank, rng, 1.0);
                break;
            case FusionMethod::concat:
                break;  // no parameters
            case FusionMethod::conv2d_fuse: {
                const std::int64_t in_ch = spec_.holistic_channels + spec_.relation_channels;
                conv2_.emplace(ps, group + ".conv", group, spec_.d_g, in_ch, ops::Dims2{3, 3},
                               ops::Dims2{1, 1}, ops::Dims2{1, 1}, rng);
                conv_bn_.emplace(ps, group + ".bn", group, spec_.d_g);
                break;
            }
            case FusionMethod::conv3d_fuse: {
                const std::int64_t in_ch = spec_.holistic_channels + spec_.relation_channels;
                conv3_.emplace(ps, group + ".conv", group, spec_.d_g, in_ch, ops::Dims3{3, 3, 3},
                               ops::Dims3{1, 1, 1}, ops::Dims3{1, 1, 1}, rng);
                conv_bn_.emplace(ps, group + ".bn", group, spec_.d_g);
                break;
            }
        }
    }

    const FusionSpec& spec() const { return spec_; }
    std::int64_t out_width() const { return spec_.fused_width(); }

    // g: [B,D_g], l: [B,D_l]; volumes only consulted by the conv fusions.
    VarT<T> forward(const VarT<T>& g, const VarT<T>& l, const VarT<T>& holistic_volume,
                    const VarT<T>& relation_volume, nn::PassCtx& ctx) {
        check_width("g", g, spec_.d_g);
        check_width("l", l, spec_.d_l);
        switch (spec_.method) {
            case FusionMethod::eq2: {
                auto scale_vec = f1_->forward(drop_.forward(l, ctx));
                auto shift_vec = f2_->forward(drop_.forward(l, ctx));
                auto modulated = ops::add(ops::hadamard(scale_vec, g), shift_vec);
                switch (spec_.append) {
                    case AppendChoice::holistic: return ops::concat<T>({modulated, g}, 1);
                    case AppendChoice::relation: return ops::concat<T>({modulated, l}, 1);
                    case AppendChoice::none: return modulated;
                }
                throw StateError("unreachable append choice");
            }
            case FusionMethod::max_fuse: return ops::emax(g, proj_->forward(l));
            case FusionMethod::average:
                return ops::scale(ops::add(g, proj_->forward(l)), T(0.5));
            case FusionMethod::sum: return ops::add(g, proj_->forward(l));
            case FusionMethod::concat: return ops::concat<T>({g, l}, 1);
            case FusionMethod::bilinear: {
                auto p = proj_->forward(l);
                auto h = ops::hadamard(bl_u_->forward(g), bl_v_->forward(p));
                return bl_p_->forward(h);
            }
            case FusionMethod::conv2d_fuse:
            case FusionMethod::conv3d_fuse:
                return fuse_volumes(holistic_volume, relation_volume, ctx);
        }
        throw StateError("unreachable fusion method");
    }

private:
    static void check_width(const char* what, const VarT<T>& v, std::int64_t want) {
        if (v->value.rank() != 2 || v->value.dim(1) != want)
            throw DimensionError(std::string("fusion: ") + what + " must be [B," +
                                 std::to_string(want) + "], got " + shape_str(v->value.shape()));
    }

    VarT<T> fuse_volumes(const VarT<T>& hvol, const VarT<T>& rvol, nn::PassCtx& ctx) {
        if (!hvol || !rvol)
            throw StateError("fusion: conv fusion needs both pathway volumes");
        if (hvol->value.rank() != 5 || rvol->value.rank() != 5)
            throw DimensionError("fusion: conv fusion expects rank-5 volumes");
        if (hvol->value.dim(1) != spec_.holistic_channels ||
            rvol->value.dim(1) != spec_.relation_channels)
            throw DimensionError("fusion: volume channels " +
                                 std::to_string(hvol->value.dim(1)) + "/" +
                                 std::to_string(rvol->value.dim(1)) + " do not match configured " +
                                 std::to_string(spec_.holistic_channels) + "/" +
                                 std::to_string(spec_.relation_channels));
        const Shape& hs = hvol->value.shape();
        auto aligned = ops::resize_nearest(rvol, {hs[2], hs[3], hs[4]});
        auto vol = ops::concat<T>({hvol, aligned}, 1);
        VarT<T> y;
        if (spec_.method == FusionMethod::conv3d_fuse) {
            y = conv3_->forward(vol);
        } else {
            // one shared 2D kernel applied per temporal slice
            std::vector<VarT<T>> slices;
            slices.reserve(static_cast<std::size_t>(hs[2]));
            for (std::int64_t t = 0; t < hs[2]; ++t) {
                auto s = conv2_->forward(ops::take_frame(vol, t));
                const Shape& ss = s->value.shape();
                slices.push_back(ops::reshape(s, {ss[0], ss[1], 1, ss[2], ss[3]}));
            }
            y = ops::concat(slices, 2);
        }
        y = ops::relu(conv_bn_->forward(y, ctx));
        const Shape& ys = y->value.shape();
        return ops::global_avgpool3d(y, {ys[2], ys[3], ys[4]});
    }

    FusionSpec spec_;
    nn::DropoutLayer<T> drop_;
    std::optional<nn::LinearLayer<T>> f1_, f2_;
    std::optional<nn::LinearLayer<T>> proj_;
    std::optional<nn::LinearLayer<T>> bl_u_, bl_v_, bl_p_;
    std::optional<nn::Conv2dLayer<T>> conv2_;
    std::optional<nn::Conv3dLayer<T>> conv3_;
    std::optional<nn::BatchNormLayer<T>> conv_bn_;
};

// Linear head + row softmax; rows of the result sum to 1.
template <class T>
TensorT<T> classify(const VarT<T>& z, const nn::LinearLayer<T>& head) {
    return ops::softmax_rows(head.forward(z)->value);
}

}  // namespace futh
