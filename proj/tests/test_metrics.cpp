#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "fairvit/metrics.hpp"

using namespace fairvit;

TEST_CASE("pearson") {
    SUBCASE("perfect correlation and anticorrelation") {
        std::vector<double> x{1, 2, 3, 7};
        std::vector<double> nx{-1, -2, -3, -7};
        CHECK(pearson(x, x) == doctest::Approx(1.0));
        CHECK(pearson(nx, x) == doctest::Approx(-1.0));
    }
    SUBCASE("direct formula evaluation") {
        CHECK(pearson({1, 2, 3}, {1, 2, 4}) == doctest::Approx(0.9819805060619659).epsilon(1e-12));
    }
    SUBCASE("constant input is an error, not zero") {
        CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), DomainError);
        CHECK_THROWS_AS(pearson({1, 2, 3}, {2, 2, 2}), DomainError);
    }
    SUBCASE("invariant under positive affine transforms") {
        Rng rng(3);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> x, y;
            for (int i = 0; i < 50; ++i) {
                x.push_back(rng.uniform(-2, 2));
                y.push_back(rng.uniform(-2, 2));
            }
            const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3, 3);
            std::vector<double> ax;
            for (double v : x) ax.push_back(a * v + b);
            CHECK(std::fabs(pearson(ax, y) - pearson(x, y)) < 1e-12);
        }
    }
}

TEST_CASE("mae and rmse") {
    SUBCASE("zero error") {
        std::vector<double> x{1, 2, 3};
        CHECK(mae(x, x) == 0.0);
        CHECK(rmse(x, x) == 0.0);
    }
    SUBCASE("errors [1,-1]") {
        CHECK(mae({1, 0}, {0, 1}) == doctest::Approx(1.0));
        CHECK(rmse({1, 0}, {0, 1}) == doctest::Approx(1.0));
    }
    SUBCASE("errors [0,2] exhibit rmse > mae") {
        CHECK(mae({1, 3}, {1, 1}) == doctest::Approx(1.0));
        CHECK(rmse({1, 3}, {1, 1}) == doctest::Approx(std::sqrt(2.0)));
    }
    SUBCASE("rmse >= mae on random vectors") {
        Rng rng(5);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> p, t;
            for (int i = 0; i < 20; ++i) {
                p.push_back(rng.uniform(-5, 5));
                t.push_back(rng.uniform(-5, 5));
            }
            CHECK(rmse(p, t) >= mae(p, t) - 1e-12);
        }
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(mae({1, 2}, {1}), ShapeError);
        CHECK_THROWS_AS(rmse({}, {}), ShapeError);
    }
}

TEST_CASE("performance gap") {
    SUBCASE("paper baseline and fair rows") {
        // one sample per group with |error| equal to the per-group MAE
        std::vector<PredRow> base{{"a", 1.0, 1.222, 0}, {"c", 1.0, 1.257, 1}};
        auto [gm, gap] = performance_gap(base);
        CHECK(gm[0] == doctest::Approx(0.222).epsilon(1e-12));
        CHECK(gm[1] == doctest::Approx(0.257).epsilon(1e-12));
        CHECK(gap == doctest::Approx(0.035).epsilon(1e-9));

        std::vector<PredRow> fair{{"a", 1.0, 1.211, 0}, {"c", 1.0, 1.217, 1}};
        CHECK(performance_gap(fair).second == doctest::Approx(0.006).epsilon(1e-9));
    }
    SUBCASE("identical error distributions give zero gap") {
        std::vector<PredRow> rows{{"a1", 2, 2.5, 0}, {"a2", 2, 1.5, 0},
                                  {"c1", 3, 3.5, 1}, {"c2", 3, 2.5, 1}};
        CHECK(performance_gap(rows).second == doctest::Approx(0.0));
    }
    SUBCASE("symmetric under swapping group labels") {
        Rng rng(7);
        std::vector<PredRow> rows, swapped;
        for (int i = 0; i < 30; ++i) {
            PredRow r{"s" + std::to_string(i), rng.uniform(1, 5), rng.uniform(1, 5), i % 2};
            rows.push_back(r);
            r.attr = 1 - r.attr;
            swapped.push_back(r);
        }
        CHECK(performance_gap(rows).second ==
              doctest::Approx(performance_gap(swapped).second).epsilon(1e-12));
    }
    SUBCASE("empty group rejected") {
        std::vector<PredRow> rows{{"a", 1, 2, 0}};
        CHECK_THROWS_AS(performance_gap(rows), ValidationError);
    }
}

TEST_CASE("bias reduction") {
    SUBCASE("paper numbers: (0.035, 0.006) -> 82.9% at one decimal") {
        const double r = bias_reduction(0.035, 0.006);
        CHECK(r == doctest::Approx(82.85714285714286).epsilon(1e-9));
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", r);
        CHECK(std::string(buf) == "82.9");
    }
    SUBCASE("no change and perfect debiasing") {
        CHECK(bias_reduction(0.4, 0.4) == doctest::Approx(0.0));
        CHECK(bias_reduction(0.4, 0.0) == doctest::Approx(100.0));
    }
    SUBCASE("zero baseline undefined") {
        CHECK_THROWS_AS(bias_reduction(0.0, 0.0), DomainError);
    }
}

TEST_CASE("probe accuracy") {
    Rng rng(11);
    SUBCASE("one-hot attribute features are perfectly leaky") {
        const size_t n = 200;
        Tensor feats({n, 2});
        std::vector<int> attrs;
        for (size_t i = 0; i < n; ++i) {
            const int a = static_cast<int>(i % 2);
            feats[i * 2 + static_cast<size_t>(a)] = 1.0;
            attrs.push_back(a);
        }
        CHECK(probe_accuracy(feats, attrs, ProbeConfig{}) == doctest::Approx(1.0));
    }
    SUBCASE("pure noise features score near chance") {
        const size_t n = 2000;
        Tensor feats = Tensor::uniform({n, 16}, rng, -1, 1);
        std::vector<int> attrs;
        for (size_t i = 0; i < n; ++i) attrs.push_back(static_cast<int>(i % 2));
        const double acc = probe_accuracy(feats, attrs, ProbeConfig{});
        CHECK(acc > 0.45);
        CHECK(acc < 0.55);
    }
    SUBCASE("label shuffling concentrates at 1/C") {
        const size_t n = 2000;
        // informative features, then shuffled labels sever the link
        std::vector<int> attrs;
        Tensor feats({n, 8});
        for (size_t i = 0; i < n; ++i) {
            const int a = static_cast<int>(i % 2);
            for (size_t j = 0; j < 8; ++j) feats[i * 8 + j] = a + 0.1 * rng.normal();
            attrs.push_back(a);
        }
        for (size_t i = n; i > 1; --i) std::swap(attrs[i - 1], attrs[rng.uniform_int(i)]);
        const double acc = probe_accuracy(feats, attrs, ProbeConfig{});
        CHECK(acc > 0.45);
        CHECK(acc < 0.55);
    }
    SUBCASE("degenerate split rejected") {
        Tensor feats({3, 2});
        CHECK_THROWS_AS(probe_accuracy(feats, {0, 0, 1}, ProbeConfig{}), ValidationError);
    }
    SUBCASE("deterministic per seed") {
        const size_t n = 100;
        Tensor feats = Tensor::uniform({n, 4}, rng, -1, 1);
        std::vector<int> attrs;
        for (size_t i = 0; i < n; ++i) attrs.push_back(static_cast<int>(i % 2));
        CHECK(probe_accuracy(feats, attrs, ProbeConfig{}) ==
              probe_accuracy(feats, attrs, ProbeConfig{}));
    }
}

TEST_CASE("metrics report serialization") {
    std::vector<PredRow> rows;
    Rng rng(13);
    for (int i = 0; i < 40; ++i) {
        rows.push_back(PredRow{"s" + std::to_string(i), rng.uniform(1, 5),
                               rng.uniform(1, 5), i % 2});
    }
    Tensor feats = Tensor::uniform({40, 4}, rng, -1, 1);
    MetricsReport rep = compute_metrics(rows, feats, ProbeConfig{16, 50, 0.5, 1}, 0.77);

    const std::string json = metrics_to_json(rep);
    for (const char* key : {"pc", "mae", "rmse", "group_mae", "performance_gap", "probe_accuracy"}) {
        CHECK(json.find(key) != std::string::npos);
    }
    MetricsReport back = metrics_from_json(json);
    CHECK(back.pc == rep.pc);
    CHECK(back.mae == rep.mae);
    CHECK(back.rmse == rep.rmse);
    CHECK(back.performance_gap == rep.performance_gap);
    CHECK(back.probe_accuracy == rep.probe_accuracy);
    CHECK(back.group_mae == rep.group_mae);
    REQUIRE(back.inline_adversary_accuracy.has_value());
    CHECK(*back.inline_adversary_accuracy == 0.77);

    SUBCASE("schema mismatch names the missing key") {
        CHECK_THROWS_WITH_AS(metrics_from_json("{\"pc\": 1.0}"), doctest::Contains("mae"),
                             ValidationError);
        CHECK_THROWS_AS(metrics_from_json("not json"), ValidationError);
    }
}
