#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "futh/futh.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace futh;

namespace {

ConfusionMatrix worked_example() {
    ConfusionMatrix cm(2, {"up", "down"});
    cm.add(0, 0, 4);
    cm.add(0, 1, 1);
    cm.add(1, 0, 2);
    cm.add(1, 1, 3);
    return cm;
}

}  // namespace

TEST_CASE("worked example: precision, accuracy, kappa") {
    auto cm = worked_example();
    auto prec = precision_per_class(cm);
    REQUIRE(std::abs(prec[0] - 4.0 / 6.0) < 1e-12);
    REQUIRE(std::abs(prec[1] - 3.0 / 4.0) < 1e-12);
    REQUIRE(std::abs(overall_accuracy(cm) - 0.7) < 1e-12);
    REQUIRE(std::abs(kappa(cm) - 0.4) < 1e-12);  // p_o 0.7, p_e 0.5
}

TEST_CASE("precision counts true positives against all claims") {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 3);  // 3 true positives for class 0
    cm.add(1, 0, 1);  // 1 false positive
    auto prec = precision_per_class(cm);
    REQUIRE(prec[0] == 0.75);
    REQUIRE(prec[1] == 0.0);  // never predicted -> defined as zero
}

TEST_CASE("diagonal matrices score perfectly") {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 5);
    cm.add(1, 1, 2);
    cm.add(2, 2, 9);
    for (double p : precision_per_class(cm)) REQUIRE(p == 1.0);
    REQUIRE(overall_accuracy(cm) == 1.0);
    REQUIRE(kappa(cm) == 1.0);
}

TEST_CASE("zero diagonal means zero accuracy") {
    ConfusionMatrix cm(2);
    cm.add(0, 1, 4);
    cm.add(1, 0, 4);
    REQUIRE(overall_accuracy(cm) == 0.0);
}

TEST_CASE("uniform confusion earns zero kappa") {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 1);
    cm.add(0, 1, 1);
    cm.add(1, 0, 1);
    cm.add(1, 1, 1);
    REQUIRE(kappa(cm) == 0.0);

    // all mass in one cell: chance agreement is total, kappa pinned to 0
    ConfusionMatrix one(2);
    one.add(0, 0, 7);
    REQUIRE(kappa(one) == 0.0);
}

TEST_CASE("metrics agree with the list-level oracle on 1000 random matrices") {
    Rng rng(606);
    for (int rep = 0; rep < 1000; ++rep) {
        const int k = 2 + static_cast<int>(rng.next_below(9));  // 2..10 classes
        const int n = 1 + static_cast<int>(rng.next_below(60));
        std::vector<int> truth, pred;
        for (int i = 0; i < n; ++i) {
            truth.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k))));
            pred.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k))));
        }
        auto cm = ConfusionMatrix::from_predictions(truth, pred, k);
        REQUIRE(cm.total() == n);
        auto want = oracle::metrics_from_lists(truth, pred, k);
        auto prec = precision_per_class(cm);
        for (int c = 0; c < k; ++c) {
            REQUIRE(std::abs(prec[static_cast<std::size_t>(c)] -
                             want.precision[static_cast<std::size_t>(c)]) < 1e-9);
            REQUIRE(prec[static_cast<std::size_t>(c)] >= 0.0);
            REQUIRE(prec[static_cast<std::size_t>(c)] <= 1.0);
        }
        REQUIRE(std::abs(overall_accuracy(cm) - want.oa) < 1e-9);
        const double kap = kappa(cm);
        REQUIRE(std::abs(kap - want.kappa) < 1e-9);
        REQUIRE(kap >= -1.0);
        REQUIRE(kap <= 1.0);
    }
}

TEST_CASE("matrix metrics match a brute-force list rebuilt from the counts") {
    Rng rng(707);
    for (int rep = 0; rep < 50; ++rep) {
        const int k = 2 + static_cast<int>(rng.next_below(5));
        ConfusionMatrix cm(k);
        std::vector<int> truth, pred;
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < k; ++c) {
                const auto n = static_cast<std::int64_t>(rng.next_below(5));
                cm.add(r, c, n);
                for (std::int64_t i = 0; i < n; ++i) {
                    truth.push_back(r);
                    pred.push_back(c);
                }
            }
        if (truth.empty()) continue;
        auto want = oracle::metrics_from_lists(truth, pred, k);
        auto prec = precision_per_class(cm);
        for (int c = 0; c < k; ++c)
            REQUIRE(std::abs(prec[static_cast<std::size_t>(c)] -
                             want.precision[static_cast<std::size_t>(c)]) < 1e-12);
        REQUIRE(std::abs(overall_accuracy(cm) - want.oa) < 1e-12);
        REQUIRE(std::abs(kappa(cm) - want.kappa) < 1e-12);
    }
}

TEST_CASE("kappa is one exactly on diagonal matrices with positive trace") {
    Rng rng(808);
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 2 + static_cast<int>(rng.next_below(5));
        ConfusionMatrix cm(k);
        for (int c = 0; c < k; ++c) cm.add(c, c, 1 + static_cast<std::int64_t>(rng.next_below(9)));
        REQUIRE(kappa(cm) == 1.0);
        cm.add(0, k - 1, 1);  // one off-diagonal sample breaks perfection
        REQUIRE(kappa(cm) < 1.0);
    }
}

TEST_CASE("row normalization rescales nonzero rows and keeps zero rows") {
    ConfusionMatrix ident(3);
    for (int c = 0; c < 3; ++c) ident.add(c, c, static_cast<std::int64_t>(c) + 1);
    auto ni = normalize_rows(ident);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) REQUIRE(ni[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == (r == c ? 1.0 : 0.0));

    ConfusionMatrix half(2);
    half.add(0, 0, 2);
    half.add(0, 1, 2);
    auto nh = normalize_rows(half);
    REQUIRE(nh[0][0] == 0.5);
    REQUIRE(nh[0][1] == 0.5);
    REQUIRE(nh[1][0] == 0.0);  // zero-support row stays all-zero
    REQUIRE(nh[1][1] == 0.0);

    Rng rng(909);
    for (int rep = 0; rep < 100; ++rep) {
        ConfusionMatrix cm(5);
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 5; ++c)
                cm.add(r, c, static_cast<std::int64_t>(rng.next_below(7)));
        auto norm = normalize_rows(cm);
        for (int r = 0; r < 5; ++r) {
            std::int64_t support = 0;
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) {
                support += cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
                sum += norm[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            }
            if (support == 0)
                REQUIRE(sum == 0.0);
            else
                REQUIRE(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("degenerate matrices are rejected") {
    REQUIRE_THROWS_AS(ConfusionMatrix(0), InputError);
    REQUIRE_THROWS_AS(ConfusionMatrix(2, {"only_one"}), InputError);
    ConfusionMatrix cm(2);
    REQUIRE_THROWS_AS(cm.add(2, 0), InputError);
    REQUIRE_THROWS_AS(cm.add(0, -1), InputError);
    REQUIRE_THROWS_AS(cm.add(0, 0, -3), InputError);
    REQUIRE_THROWS_AS(overall_accuracy(cm), InputError);  // still empty
    REQUIRE_THROWS_AS(kappa(cm), InputError);
    REQUIRE_THROWS_AS(ConfusionMatrix::from_predictions({0, 1}, {0}, 2), InputError);
}

TEST_CASE("reports render byte-stable text") {
    auto report = make_eval_report(worked_example());
    const std::string want =
        "up,0.666667\n"
        "down,0.750000\n"
        "OA,0.700000\n"
        "kappa,0.400000\n"
        "0.800000,0.200000\n"
        "0.400000,0.600000\n";
    REQUIRE(report.to_text() == want);

    ConfusionMatrix unnamed(2);
    unnamed.add(0, 0, 1);
    unnamed.add(1, 1, 1);
    REQUIRE(unnamed.name_of(0) == "class0");
    auto r2 = make_eval_report(unnamed);
    REQUIRE(r2.to_text().rfind("class0,1.000000\nclass1,1.000000\n", 0) == 0);
}
