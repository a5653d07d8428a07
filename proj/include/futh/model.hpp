#pragma once

#include <string>

#include "futh/fusion.hpp"
#include "futh/pathways.hpp"

namespace futh {

struct ModelSpec {
    std::int64_t in_channels = 3;
    std::int64_t frames = 16;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t n_classes = 4;
    HolisticSpec holistic;
    RelationSpec relation;
    FusionSpec fusion;

    // Fills the widths fusion derives from the pathways, then validates.
    void finalize() {
        if (n_classes < 1) throw ConfigError("model: need at least one class");
        if (in_channels < 1) throw ConfigError("model: need at least one channel");
        holistic.in_channels = in_channels;
        relation.extractor.in_channels = in_channels;
        relation.n_frames = frames;
        holistic.validate();
        relation.validate();
        fusion.d_g = holistic.d_g();
        fusion.d_l = relation.bank_width();
        fusion.holistic_channels = holistic.blocks.back().out_ch;
        fusion.relation_channels = relation.extractor.blocks.back().out_ch;
        fusion.validate();
    }
};

// Compact trunk for 16x32x32 clips; widths scale off d_g (default 64).
inline ModelSpec make_desk_spec(std::int64_t n_classes = 4, std::int64_t frames = 16,
                                std::int64_t height = 32, std::int64_t width = 32,
                                std::int64_t d_g = 64, std::int64_t d_f = 32,
                                std::int64_t d_r = 16) {
    if (d_g < 4) throw ConfigError("desk model: d_g must be at least 4");
    ModelSpec s;
    s.frames = frames;
    s.height = height;
    s.width = width;
    s.n_classes = n_classes;
    s.holistic.blocks = {
        {d_g / 4, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, true, {1, 3, 3}, {1, 2, 2}},
        {d_g / 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, {1, 3, 3}, {1, 2, 2}},
        {d_g, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}, true, {2, 1, 1}, {2, 1, 1}},
    };
    if (d_f < 4) throw ConfigError("desk model: d_f must be at least 4");
    // Shallow on purpose: one conv block keeps frame content near-linearly
    // decodable from the flatten-linear feature, which lets the low-lr relation
    // phase train from scratch within its epoch budget.
    s.relation.extractor.blocks = {
        {d_f / 2, {3, 3}, {2, 2}, {1, 1}},
    };
    s.relation.extractor.head = ExtractorHead::flatten_linear;
    s.relation.extractor.d_f = d_f;
    s.relation.d_r = d_r;
    s.fusion.method = FusionMethod::eq2;
    s.fusion.append = AppendChoice::holistic;
    s.finalize();
    return s;
}

// Full-width trunk: 16x112x112 clips, D_g = 1024, D_f = 1024, D_r = 256,
// final 2x7x7 global pool. Used for width-contract checks, not training runs.
inline ModelSpec make_paper_spec(std::int64_t n_classes = 25) {
    ModelSpec s;
    s.frames = 16;
    s.height = 112;
    s.width = 112;
    s.n_classes = n_classes;
    s.holistic.blocks = {
        {64, {3, 7, 7}, {1, 2, 2}, {1, 3, 3}, true, {1, 3, 3}, {1, 2, 2}},
        {128, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, {1, 3, 3}, {1, 2, 2}},
        {256, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}},
        {512, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}},
        {1024, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}},
    };
    s.relation.extractor.blocks = {
        {64, {7, 7}, {2, 2}, {3, 3}, true, {3, 3}, {2, 2}},
        {128, {3, 3}, {1, 1}, {1, 1}, true, {3, 3}, {2, 2}},
        {256, {3, 3}, {2, 2}, {1, 1}},
        {512, {3, 3}, {2, 2}, {1, 1}},
        {1024, {3, 3}, {1, 1}, {1, 1}},
    };
    s.relation.extractor.head = ExtractorHead::global_avg;
    s.relation.extractor.d_f = 1024;
    s.relation.d_r = 256;
    s.fusion.method = FusionMethod::eq2;
    s.fusion.append = AppendChoice::holistic;
    s.finalize();
    return s;
}

// Per-pathway pass contexts: a phase may train one pathway while the frozen
// ones run in eval mode so their batch-norm statistics stay untouched.
struct ModeSet {
    nn::PassCtx holistic, relation, fusion;

    static ModeSet all_eval() { return {}; }
};

template <class T>
class FuThNet {
public:
    FuThNet(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
        spec_.finalize();
        Rng rng(init_seed);
        holistic_ = std::make_unique<HolisticPathway<T>>(params_, spec_.holistic, rng);
        relation_ = std::make_unique<RelationPathway<T>>(
            params_, spec_.relation, Shape{spec_.height, spec_.width}, rng);
        fusion_ = std::make_unique<FusionModule<T>>(params_, spec_.fusion, rng);
        // Heads start near zero so every phase opens close to chance-level
        // loss while still passing gradient through to the features.
        // Unit head gain keeps epoch-0 loss near ln K (features are BN-scaled)
        // while leaving the gradient into the features large enough for the
        // low-lr phases to train from scratch.
        holistic_head_.emplace(params_, "holistic_head.fc", "holistic_head", spec_.n_classes,
                               spec_.holistic.d_g(), rng, 1.0);
        relation_head_.emplace(params_, "relation_head.fc", "relation_head", spec_.n_classes,
                               spec_.relation.bank_width(), rng, 1.0);
        fusion_head_.emplace(params_, "fusion_head.fc", "fusion_head", spec_.n_classes,
                             fusion_->out_width(), rng, 1.0);
    }

    FuThNet(const FuThNet&) = delete;
    FuThNet& operator=(const FuThNet&) = delete;

    const ModelSpec& spec() const { return spec_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }
    std::int64_t d_g() const { return spec_.holistic.d_g(); }
    std::int64_t bank_width() const { return spec_.relation.bank_width(); }
    std::int64_t fused_width() const { return fusion_->out_width(); }
    std::int64_t n_classes() const { return spec_.n_classes; }
    FusionModule<T>& fusion() { return *fusion_; }
    RelationPathway<T>& relation() { return *relation_; }
    HolisticPathway<T>& holistic() { return *holistic_; }

    struct Features {
        VarT<T> g, l;            // [B,D_g], [B,D_l]
        VarT<T> hvol, rvol;      // last pre-pool volumes; null unless requested
    };

    Features features(const VarT<T>& clip, ModeSet& modes, bool want_volumes) {
        check_clip(clip);
        Features f;
        if (want_volumes) {
            auto h = holistic_->forward_full(clip, modes.holistic);
            f.g = h.g;
            f.hvol = h.last_volume;
            auto r = relation_->extractor().forward_full(clip, modes.relation);
            f.rvol = r.volume;
            f.l = relation_->bank_from_features(r.features, modes.relation);
        } else {
            f.g = holistic_->forward(clip, modes.holistic);
            f.l = relation_->forward(clip, modes.relation);
        }
        return f;
    }

    VarT<T> fuse(const Features& f, ModeSet& modes) {
        return fusion_->forward(f.g, f.l, f.hvol, f.rvol, modes.fusion);
    }

    VarT<T> holistic_logits(const VarT<T>& clip, nn::PassCtx& ctx) {
        check_clip(clip);
        return holistic_head_->forward(holistic_->forward(clip, ctx));
    }

    VarT<T> relation_logits(const VarT<T>& clip, nn::PassCtx& ctx) {
        check_clip(clip);
        return relation_head_->forward(relation_->forward(clip, ctx));
    }

    VarT<T> fused_logits(const VarT<T>& clip, ModeSet& modes) {
        auto f = features(clip, modes, fusion_->spec().needs_volumes());
        return fusion_head_->forward(fuse(f, modes));
    }

    VarT<T> head_logits_over_g(const VarT<T>& g) { return holistic_head_->forward(g); }
    VarT<T> head_logits_over_l(const VarT<T>& l) { return relation_head_->forward(l); }
    VarT<T> head_logits_over_z(const VarT<T>& z) { return fusion_head_->forward(z); }

private:
    void check_clip(const VarT<T>& clip) const {
        const Shape& s = clip->value.shape();
        if (s.size() != 5 || s[1] != spec_.in_channels || s[2] != spec_.frames ||
            s[3] != spec_.height || s[4] != spec_.width)
            throw DimensionError("model: expected clips shaped [B," +
                                 std::to_string(spec_.in_channels) + "," +
                                 std::to_string(spec_.frames) + "," + std::to_string(spec_.height) +
                                 "," + std::to_string(spec_.width) + "], got " + shape_str(s));
    }

    ModelSpec spec_;
    nn::ParamStore<T> params_;
    std::unique_ptr<HolisticPathway<T>> holistic_;
    std::unique_ptr<RelationPathway<T>> relation_;
    std::unique_ptr<FusionModule<T>> fusion_;
    std::optional<nn::LinearLayer<T>> holistic_head_;
    std::optional<nn::LinearLayer<T>> relation_head_;
    std::optional<nn::LinearLayer<T>> fusion_head_;
};

}  // namespace futh
