#include <catch2/catch_amalgamated.hpp>

#include "futh/futh.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace futh;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

// Tiny double-precision spec used for end-to-end gradient checks.
ModelSpec tiny_spec() {
    ModelSpec s;
    s.in_channels = 1;
    s.frames = 3;
    s.height = 8;
    s.width = 8;
    s.n_classes = 2;
    s.holistic.in_channels = 1;
    s.holistic.blocks = {{4, {2, 3, 3}, {1, 1, 1}, {0, 1, 1}, true, {1, 3, 3}, {1, 2, 2}}};
    s.relation.extractor.in_channels = 1;
    s.relation.extractor.blocks = {{4, {3, 3}, {2, 2}, {1, 1}}};
    s.relation.extractor.head = ExtractorHead::flatten_linear;
    s.relation.extractor.d_f = 5;
    s.relation.n_frames = 3;
    s.relation.d_r = 3;
    s.fusion.method = FusionMethod::eq2;
    s.fusion.append = AppendChoice::holistic;
    s.fusion.dropout = 0.5;
    s.finalize();
    return s;
}

}  // namespace

TEST_CASE("eval tuples are evenly spaced with endpoints") {
    REQUIRE(sample_tuple(16, 2, false, nullptr) == std::vector<std::int64_t>{0, 15});
    REQUIRE(sample_tuple(16, 4, false, nullptr) == std::vector<std::int64_t>{0, 5, 10, 15});
    auto full = sample_tuple(16, 16, false, nullptr);
    for (std::int64_t k = 0; k < 16; ++k) REQUIRE(full[static_cast<std::size_t>(k)] == k);
}

TEST_CASE("train tuples are sorted unique draws within range") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        auto t = sample_tuple(16, 3, true, &rng);
        REQUIRE(t.size() == 3);
        for (std::size_t i = 0; i < t.size(); ++i) {
            REQUIRE(t[i] >= 0);
            REQUIRE(t[i] < 16);
            if (i) REQUIRE(t[i] > t[i - 1]);
        }
    }
    auto all = sample_tuple(4, 4, true, &rng);
    REQUIRE(all == std::vector<std::int64_t>{0, 1, 2, 3});
}

TEST_CASE("tuple sampling rejects bad scales") {
    Rng rng(6);
    REQUIRE_THROWS_AS(sample_tuple(16, 1, false, nullptr), InputError);
    REQUIRE_THROWS_AS(sample_tuple(4, 5, true, &rng), InputError);
    REQUIRE_THROWS_AS(sample_tuple(4, 3, true, nullptr), StateError);
}

TEST_CASE("desk holistic pathway produces B x D_g features") {
    auto spec = make_desk_spec();
    nn::ParamStore<float> ps;
    Rng rng(7);
    HolisticPathway<float> hp(ps, spec.holistic, rng);
    auto clip = make_input(randn<float>({2, 3, 16, 32, 32}, 8, 0.5));
    nn::PassCtx ctx{false, nullptr};
    auto out = hp.forward_full(clip, ctx);
    REQUIRE(out.g->value.shape() == Shape{2, 64});
    REQUIRE(out.last_volume->value.shape() == Shape{2, 64, 4, 3, 3});
}

TEST_CASE("holistic pathway maps a zero clip to the zero vector in eval mode") {
    auto spec = make_desk_spec();
    nn::ParamStore<float> ps;
    Rng rng(9);
    HolisticPathway<float> hp(ps, spec.holistic, rng);
    auto clip = make_input(TensorT<float>::zeros({1, 3, 16, 32, 32}));
    nn::PassCtx ctx{false, nullptr};
    auto g = hp.forward(clip, ctx);
    for (std::int64_t i = 0; i < g->value.numel(); ++i) REQUIRE(g->value[i] == 0.0f);
}

TEST_CASE("early holistic pools must keep temporal extent") {
    auto spec = make_desk_spec().holistic;
    spec.blocks[0].pool_kernel = {2, 3, 3};
    spec.blocks[0].pool_stride = {2, 2, 2};
    REQUIRE_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("holistic dimension errors name the offending block") {
    auto spec = make_desk_spec();
    nn::ParamStore<float> ps;
    Rng rng(10);
    HolisticPathway<float> hp(ps, spec.holistic, rng);
    auto clip = make_input(randn<float>({1, 3, 16, 5, 5}, 11));
    nn::PassCtx ctx{false, nullptr};
    try {
        hp.forward(clip, ctx);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        REQUIRE(std::string(e.what()).find("holistic block") != std::string::npos);
    }
}

TEST_CASE("frame features depend only on their own frame") {
    auto spec = make_desk_spec();
    nn::ParamStore<float> ps;
    Rng rng(12);
    FrameFeatureExtractor<float> ext(ps, spec.relation.extractor, {32, 32}, rng);
    auto base = randn<float>({1, 3, 16, 32, 32}, 13, 0.5);
    TensorT<float> bumped = base;
    const std::int64_t plane = 32 * 32;
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < plane; ++i) bumped[(c * 16 + 5) * plane + i] += 1.0f;
    nn::PassCtx ctx{false, nullptr};
    auto fa = ext.forward(make_input(base), ctx);
    auto fb = ext.forward(make_input(bumped), ctx);
    REQUIRE(fa->value.shape() == Shape{1, 16, 32});
    for (std::int64_t t = 0; t < 16; ++t) {
        double d = 0;
        for (std::int64_t k = 0; k < 32; ++k)
            d = std::max(d, std::abs(static_cast<double>(fa->value[t * 32 + k]) -
                                     static_cast<double>(fb->value[t * 32 + k])));
        if (t == 5)
            REQUIRE(d > 0.0);
        else
            REQUIRE(d == 0.0);
    }
}

TEST_CASE("identical frames yield identical feature rows") {
    auto spec = make_desk_spec();
    nn::ParamStore<float> ps;
    Rng rng(14);
    FrameFeatureExtractor<float> ext(ps, spec.relation.extractor, {32, 32}, rng);
    auto frame = randn<float>({1, 3, 1, 32, 32}, 15, 0.5);
    TensorT<float> clip({1, 3, 16, 32, 32});
    const std::int64_t plane = 32 * 32;
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t t = 0; t < 16; ++t)
            for (std::int64_t i = 0; i < plane; ++i)
                clip[(c * 16 + t) * plane + i] = frame[c * plane + i];
    nn::PassCtx ctx{false, nullptr};
    auto f = ext.forward(make_input(clip), ctx);
    for (std::int64_t t = 1; t < 16; ++t)
        for (std::int64_t k = 0; k < 32; ++k)
            REQUIRE(f->value[t * 32 + k] == f->value[k]);
}

TEST_CASE("relation MLP matches a hand-rolled affine oracle in eval mode") {
    nn::ParamStore<double> ps;
    Rng rng(16);
    const std::int64_t d_f = 4, d_r = 3, m = 2;
    RelationScaleMLP<double> mlp(ps, m, d_f, d_r, rng);
    auto features = make_input(randn<double>({2, 5, d_f}, 17));
    nn::PassCtx ctx{false, nullptr};
    auto out = mlp.forward(features, {1, 3}, ctx);
    REQUIRE(out->value.shape() == Shape{2, d_r});

    // Oracle: gather rows 1 and 3, two affine layers, eval-mode batch-norm
    // with fresh running stats (mean 0, var 1), relu between.
    TensorT<double> s_m({2, m * d_f});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t k = 0; k < d_f; ++k) {
            s_m[b * m * d_f + k] = features->value[(b * 5 + 1) * d_f + k];
            s_m[b * m * d_f + d_f + k] = features->value[(b * 5 + 3) * d_f + k];
        }
    auto w1 = ps.find("relation_mlp.m2.fc1.w")->value;
    auto b1 = ps.find("relation_mlp.m2.fc1.b")->value;
    auto w2 = ps.find("relation_mlp.m2.fc2.w")->value;
    auto b2 = ps.find("relation_mlp.m2.fc2.b")->value;
    const double bn_scale = 1.0 / std::sqrt(1.0 + 1e-5);
    auto h = oracle::linear(s_m, w1, b1);
    for (std::int64_t i = 0; i < h.numel(); ++i) h[i] = std::max(0.0, h[i] * bn_scale);
    auto y = oracle::linear(h, w2, b2);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(0.0, y[i] * bn_scale);
    REQUIRE(max_abs_diff(out->value, y) < 1e-5);
}

TEST_CASE("relation MLP maps zero features to zero") {
    nn::ParamStore<double> ps;
    Rng rng(18);
    RelationScaleMLP<double> mlp(ps, 3, 4, 5, rng);
    auto features = make_input(TensorT<double>::zeros({1, 6, 4}));
    nn::PassCtx ctx{false, nullptr};
    auto out = mlp.forward(features, {0, 2, 5}, ctx);
    for (std::int64_t i = 0; i < out->value.numel(); ++i) REQUIRE(out->value[i] == 0.0);
}

TEST_CASE("relation MLP rejects tuple/scale mismatch") {
    nn::ParamStore<double> ps;
    Rng rng(19);
    RelationScaleMLP<double> mlp(ps, 3, 4, 5, rng);
    auto features = make_input(randn<double>({1, 6, 4}, 20));
    nn::PassCtx ctx{false, nullptr};
    REQUIRE_THROWS_AS(mlp.forward(features, {0, 2}, ctx), InputError);
}

TEST_CASE("bank widths follow D_r times N minus one") {
    auto desk = make_desk_spec();
    REQUIRE(desk.relation.bank_width() == 16 * 15);
    RelationSpec paper_like;
    paper_like.n_frames = 16;
    paper_like.d_r = 256;
    REQUIRE(paper_like.bank_width() == 3840);
}

TEST_CASE("a two-frame bank is the single m=2 relation") {
    nn::ParamStore<double> ps;
    Rng rng(21);
    RelationSpec spec;
    spec.extractor.in_channels = 1;
    spec.extractor.blocks = {{2, {3, 3}, {2, 2}, {1, 1}}};
    spec.extractor.d_f = 4;
    spec.n_frames = 2;
    spec.d_r = 3;
    RelationPathway<double> rp(ps, spec, {8, 8}, rng);
    auto features = make_input(randn<double>({2, 2, 4}, 22));
    nn::PassCtx ctx{false, nullptr};
    auto bank = rp.bank_from_features(features, ctx);
    REQUIRE(bank->value.shape() == Shape{2, 3});
    auto seg = rp.mlps()[0].forward(features, {0, 1}, ctx);
    REQUIRE(max_abs_diff(bank->value, seg->value) == 0.0);
}

TEST_CASE("training bank with K tuples replays as a manual average") {
    nn::ParamStore<double> ps;
    Rng rng(23);
    RelationSpec spec;
    spec.extractor.in_channels = 1;
    spec.extractor.blocks = {{2, {3, 3}, {2, 2}, {1, 1}}};
    spec.extractor.d_f = 4;
    spec.n_frames = 5;
    spec.d_r = 3;
    spec.tuples_per_scale = 3;
    RelationPathway<double> rp(ps, spec, {8, 8}, rng);
    auto features = make_input(randn<double>({2, 5, 4}, 24));

    Rng bank_rng(314);
    nn::PassCtx train_ctx{true, &bank_rng};
    auto bank = rp.bank_from_features(features, train_ctx);

    Rng replay_rng(314);
    nn::PassCtx replay_ctx{true, &replay_rng};
    std::vector<VarT<double>> segments;
    for (auto& mlp : rp.mlps()) {
        TensorT<double> acc({2, 3});
        for (int k = 0; k < 3; ++k) {
            auto tuple = sample_tuple(5, mlp.scale(), true, &replay_rng);
            auto r = mlp.forward(features, tuple, replay_ctx);
            for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += r->value[i];
        }
        for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] /= 3.0;
        segments.push_back(make_leaf(acc));
    }
    auto manual = ops::concat(segments, 1);
    REQUIRE(max_abs_diff(bank->value, manual->value) < 1e-7);
}

TEST_CASE("eval bank segments ignore frames outside their tuple") {
    nn::ParamStore<double> ps;
    Rng rng(25);
    RelationSpec spec;
    spec.extractor.in_channels = 1;
    spec.extractor.blocks = {{2, {3, 3}, {2, 2}, {1, 1}}};
    spec.extractor.d_f = 4;
    spec.n_frames = 5;
    spec.d_r = 3;
    RelationPathway<double> rp(ps, spec, {8, 8}, rng);
    // Pin the m=5 MLP to positive weights so its relus cannot mask the bump.
    ps.find("relation_mlp.m5.fc1.w")->value.fill(0.05);
    ps.find("relation_mlp.m5.fc1.b")->value.fill(0.5);
    ps.find("relation_mlp.m5.fc2.w")->value.fill(0.2);
    ps.find("relation_mlp.m5.fc2.b")->value.fill(0.5);
    auto base = randn<double>({1, 5, 4}, 26);
    TensorT<double> bumped = base;
    // Frame 2 is outside the m=2 eval tuple (0,4) but inside the m=5 tuple.
    for (std::int64_t k = 0; k < 4; ++k) bumped[2 * 4 + k] += 1.0;
    nn::PassCtx ctx{false, nullptr};
    auto ba = rp.bank_from_features(make_input(base), ctx);
    auto bb = rp.bank_from_features(make_input(bumped), ctx);
    double d_m2 = 0, d_m5 = 0;
    for (std::int64_t i = 0; i < 3; ++i)
        d_m2 = std::max(d_m2, std::abs(ba->value[i] - bb->value[i]));
    for (std::int64_t i = 9; i < 12; ++i)
        d_m5 = std::max(d_m5, std::abs(ba->value[i] - bb->value[i]));
    REQUIRE(d_m2 == 0.0);
    REQUIRE(d_m5 > 0.0);
}

TEST_CASE("reversing frame order changes the bank") {
    nn::ParamStore<double> ps;
    Rng rng(27);
    RelationSpec spec;
    spec.extractor.in_channels = 1;
    spec.extractor.blocks = {{2, {3, 3}, {2, 2}, {1, 1}}};
    spec.extractor.d_f = 4;
    spec.n_frames = 5;
    spec.d_r = 3;
    RelationPathway<double> rp(ps, spec, {8, 8}, rng);
    auto base = randn<double>({1, 5, 4}, 28);
    TensorT<double> rev({1, 5, 4});
    for (std::int64_t t = 0; t < 5; ++t)
        for (std::int64_t k = 0; k < 4; ++k) rev[t * 4 + k] = base[(4 - t) * 4 + k];
    nn::PassCtx ctx{false, nullptr};
    auto ba = rp.bank_from_features(make_input(base), ctx);
    auto bb = rp.bank_from_features(make_input(rev), ctx);
    REQUIRE(max_abs_diff(ba->value, bb->value) > 0.0);
}

TEST_CASE("end-to-end gradients through both pathways check out") {
    FuThNet<double> model(tiny_spec(), 123);
    Rng rng(29);
    auto clip_t = TensorT<double>::randn({1, 1, 3, 8, 8}, rng);
    const std::vector<int> labels = {1};

    std::vector<VarT<double>> leaves = {
        model.params().find("holistic.block1.conv.w"),
        model.params().find("holistic.block1.bn.gamma"),
        model.params().find("relation_ext.block1.conv.w"),
        model.params().find("relation_ext.proj.w"),
        model.params().find("relation_mlp.m2.fc1.w"),
        model.params().find("relation_mlp.m3.fc2.w"),
        model.params().find("fusion.f1.w"),
        model.params().find("fusion_head.fc.w"),
    };
    const double err = grad_check(leaves, [&] {
        ModeSet modes = ModeSet::all_eval();
        auto x = make_input(clip_t);
        auto logits = model.fused_logits(x, modes);
        return ops::softmax_cross_entropy(logits, labels).loss;
    });
    REQUIRE(err < 1e-4);
}

TEST_CASE("pathway shape contracts hold for scaled configurations") {
    auto spec = make_desk_spec(4, 16, 32, 32, 32, 16, 8);
    FuThNet<float> model(spec, 5);
    REQUIRE(model.d_g() == 32);
    REQUIRE(model.bank_width() == 8 * 15);
    auto clip = make_input(randn<float>({1, 3, 16, 32, 32}, 30, 0.5));
    ModeSet modes = ModeSet::all_eval();
    auto f = model.features(clip, modes, false);
    REQUIRE(f.g->value.shape() == Shape{1, 32});
    REQUIRE(f.l->value.shape() == Shape{1, 120});
}
