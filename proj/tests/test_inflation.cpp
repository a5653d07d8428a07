#include <catch2/catch_amalgamated.hpp>

#include "futh/futh.hpp"
#include "helpers.hpp"

using namespace futh;
using testutil::randn;

TEST_CASE("inflate replicates and rescales temporal slices") {
    TensorT<float> w2d({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w3d = inflate_2d_to_3d(w2d, 2);
    REQUIRE(w3d.shape() == Shape{1, 1, 2, 2, 2});
    const float expect[] = {0.5f, 1.0f, 1.5f, 2.0f};
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t i = 0; i < 4; ++i) REQUIRE(w3d[t * 4 + i] == expect[i]);
}

TEST_CASE("inflate with a single slice inserts a singleton axis") {
    auto w2d = randn<float>({3, 2, 3, 3}, 11);
    auto w3d = inflate_2d_to_3d(w2d, 1);
    REQUIRE(w3d.shape() == Shape{3, 2, 1, 3, 3});
    for (std::int64_t i = 0; i < w2d.numel(); ++i) REQUIRE(w3d[i] == w2d[i]);
}

TEST_CASE("temporal sum of the inflated kernel recovers the source") {
    auto w2d = randn<float>({4, 3, 3, 3}, 21);
    auto w3d = inflate_2d_to_3d(w2d, 4);
    const std::int64_t kk = 9;
    for (std::int64_t f = 0; f < 4; ++f)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < kk; ++i) {
                double s = 0;
                for (std::int64_t t = 0; t < 4; ++t)
                    s += w3d[((f * 3 + c) * 4 + t) * kk + i];
                REQUIRE(std::abs(s - static_cast<double>(w2d[(f * 3 + c) * kk + i])) < 1e-7);
            }
}

TEST_CASE("inflate is linear in the source weights") {
    auto w2d = randn<float>({2, 2, 3, 3}, 31);
    TensorT<float> scaled = w2d;
    for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 2.5f;
    auto a = inflate_2d_to_3d(scaled, 3);
    auto b = inflate_2d_to_3d(w2d, 3);
    for (std::int64_t i = 0; i < a.numel(); ++i)
        REQUIRE(std::abs(a[i] - 2.5f * b[i]) < 1e-6f);
}

TEST_CASE("inflate rejects a zero temporal extent") {
    auto w2d = randn<float>({1, 1, 2, 2}, 41);
    REQUIRE_THROWS_AS(inflate_2d_to_3d(w2d, 0), InputError);
}

TEST_CASE("boring video: zero frame deviates by exactly zero") {
    TensorT<float> frame({2, 5, 5});
    auto w2d = randn<float>({3, 2, 3, 3}, 51);
    auto bias = TensorT<float>::zeros({3});
    REQUIRE(boring_video_equivalence(frame, w2d, bias, 3, {1, 1}) == 0.0);
}

TEST_CASE("boring video: constant frame with ones kernel deviates by exactly zero") {
    auto frame = TensorT<float>::full({1, 4, 4}, 2.0f);
    auto w2d = TensorT<float>::ones({1, 1, 2, 2});
    auto bias = TensorT<float>::zeros({1});
    REQUIRE(boring_video_equivalence(frame, w2d, bias, 2, {1, 1}) == 0.0);
}

TEST_CASE("boring video equivalence on the pinned random shape") {
    Rng rng(61);
    auto frame = TensorT<float>::randn({3, 16, 16}, rng);
    auto w2d = TensorT<float>::randn({8, 3, 3, 3}, rng);
    auto bias = TensorT<float>::randn({8}, rng);
    REQUIRE(boring_video_equivalence(frame, w2d, bias, 3, {1, 1}) < 1e-5);
}

TEST_CASE("boring video equivalence holds across strides and sizes") {
    Rng rng(71);
    for (int rep = 0; rep < 10; ++rep) {
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng.next_below(3));
        const std::int64_t f = 1 + static_cast<std::int64_t>(rng.next_below(4));
        const std::int64_t hw = 8 + static_cast<std::int64_t>(rng.next_below(9));
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.next_below(3));
        const std::int64_t nt = 1 + static_cast<std::int64_t>(rng.next_below(4));
        const std::int64_t s = 1 + static_cast<std::int64_t>(rng.next_below(2));
        auto frame = TensorT<float>::randn({c, hw, hw}, rng);
        auto w2d = TensorT<float>::randn({f, c, k, k}, rng);
        auto bias = TensorT<float>::randn({f}, rng);
        REQUIRE(boring_video_equivalence(frame, w2d, bias, nt, {s, s}) < 1e-5);
    }
}
