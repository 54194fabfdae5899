#include <doctest.h>

#include <cmath>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/metrics.hpp"
#include "cafe/rng.hpp"

using namespace cafe;
using fair::PredictionRecord;

namespace {

// (true, pred, group) shorthand
PredictionRecord rec(int t, int p, int g) { return {t, p, g}; }

std::vector<PredictionRecord> tpr_fixture() {
    std::vector<PredictionRecord> r;
    // group 1: 4 positives, 3 predicted positive (TPR 0.75)
    r.push_back(rec(1, 1, 1));
    r.push_back(rec(1, 1, 1));
    r.push_back(rec(1, 1, 1));
    r.push_back(rec(1, 0, 1));
    // group 0: 5 positives, 2 predicted positive (TPR 0.4)
    r.push_back(rec(1, 1, 0));
    r.push_back(rec(1, 1, 0));
    r.push_back(rec(1, 0, 0));
    r.push_back(rec(1, 0, 0));
    r.push_back(rec(1, 0, 0));
    // some negatives so the pool is realistic
    r.push_back(rec(0, 0, 0));
    r.push_back(rec(0, 1, 1));
    return r;
}

}  // namespace

TEST_CASE("eo gap") {
    SUBCASE("hand-counted TPRs") {
        fair::EoGap eo = fair::eo_gap(tpr_fixture());
        CHECK(eo.value == doctest::Approx(0.35).epsilon(1e-12));
        CHECK(eo.signed_value == doctest::Approx(0.35).epsilon(1e-12));
    }

    SUBCASE("identical TPRs give zero") {
        std::vector<PredictionRecord> r{rec(1, 1, 0), rec(1, 0, 0), rec(1, 1, 1), rec(1, 0, 1)};
        CHECK(fair::eo_gap(r).value == 0.0);
    }

    SUBCASE("perfect classifier gives zero") {
        std::vector<PredictionRecord> r{rec(1, 1, 0), rec(0, 0, 0), rec(1, 1, 1), rec(0, 0, 1)};
        CHECK(fair::eo_gap(r).value == 0.0);
    }

    SUBCASE("invariant to permutation and duplication") {
        std::vector<PredictionRecord> base = tpr_fixture();
        double want = fair::eo_gap(base).value;

        std::vector<PredictionRecord> shuffled = base;
        rng::Stream stream(5);
        stream.shuffle(shuffled);
        CHECK(fair::eo_gap(shuffled).value == want);

        std::vector<PredictionRecord> tripled;
        for (int k = 0; k < 3; ++k) {
            tripled.insert(tripled.end(), base.begin(), base.end());
        }
        CHECK(fair::eo_gap(tripled).value == want);
    }

    SUBCASE("group without positives is an error") {
        std::vector<PredictionRecord> r{rec(1, 1, 0), rec(0, 0, 1)};
        CHECK_THROWS_WITH_AS(fair::eo_gap(r), doctest::Contains("group 1"), MetricError);
    }
}

TEST_CASE("fate") {
    SUBCASE("identical model and baseline scores zero") {
        CHECK(fair::fate(0.85, 0.85, 0.44, 0.44) == 0.0);
    }

    SUBCASE("published table rows reproduce in F1 mode") {
        CHECK(std::abs(fair::fate(0.8100, 0.8507, 0.3533, 0.4263) - 0.1233) <= 1e-3);
        CHECK(std::abs(fair::fate(0.7814, 0.7253, 0.2522, 0.3069) - 0.2559) <= 1e-3);
    }

    SUBCASE("strictly increases as the gap shrinks") {
        double prev = fair::fate(0.8, 0.8, 0.40, 0.40);
        for (double eo = 0.38; eo > 0.1; eo -= 0.05) {
            double cur = fair::fate(0.8, 0.8, eo, 0.40);
            CHECK(cur > prev);
            prev = cur;
        }
    }

    SUBCASE("zero baselines rejected") {
        CHECK_THROWS_AS(fair::fate(0.8, 0.0, 0.3, 0.4), MetricError);
        CHECK_THROWS_AS(fair::fate(0.8, 0.7, 0.3, 0.0), MetricError);
    }
}

TEST_CASE("f1 and accuracy") {
    SUBCASE("all correct") {
        std::vector<PredictionRecord> r{rec(1, 1, 0), rec(0, 0, 0), rec(1, 1, 1)};
        fair::F1Acc m = fair::f1_accuracy(r);
        CHECK(m.f1 == 1.0);
        CHECK(m.accuracy == 1.0);
    }

    SUBCASE("TP=3 FP=1 FN=2 TN=4") {
        std::vector<PredictionRecord> r;
        for (int i = 0; i < 3; ++i) r.push_back(rec(1, 1, 0));
        r.push_back(rec(0, 1, 0));
        for (int i = 0; i < 2; ++i) r.push_back(rec(1, 0, 0));
        for (int i = 0; i < 4; ++i) r.push_back(rec(0, 0, 0));
        fair::F1Acc m = fair::f1_accuracy(r);
        CHECK(m.f1 == doctest::Approx(2.0 * 0.75 * 0.6 / (0.75 + 0.6)).epsilon(1e-12));
        CHECK(m.accuracy == doctest::Approx(0.7).epsilon(1e-12));
    }

    SUBCASE("all-negative convention") {
        std::vector<PredictionRecord> r{rec(0, 0, 0), rec(0, 0, 1)};
        fair::F1Acc m = fair::f1_accuracy(r);
        CHECK(m.f1 == 0.0);
        CHECK(m.accuracy == 1.0);
    }
}

TEST_CASE("per-group metrics") {
    SUBCASE("single group matches the global numbers") {
        std::vector<PredictionRecord> r{rec(1, 1, 3), rec(0, 1, 3), rec(1, 0, 3)};
        auto by_group = fair::per_group_metrics(r);
        REQUIRE(by_group.size() == 1);
        fair::F1Acc global = fair::f1_accuracy(r);
        CHECK(by_group.at(3).f1 == global.f1);
        CHECK(by_group.at(3).accuracy == global.accuracy);
        CHECK(by_group.at(3).support == 3);
    }

    SUBCASE("two disjoint groups computed independently") {
        std::vector<PredictionRecord> g0{rec(1, 1, 0), rec(0, 0, 0), rec(1, 0, 0)};
        std::vector<PredictionRecord> g1{rec(1, 1, 1), rec(0, 1, 1)};
        std::vector<PredictionRecord> all = g0;
        all.insert(all.end(), g1.begin(), g1.end());
        auto by_group = fair::per_group_metrics(all);
        REQUIRE(by_group.size() == 2);
        CHECK(by_group.at(0).f1 == fair::f1_accuracy(g0).f1);
        CHECK(by_group.at(1).accuracy == fair::f1_accuracy(g1).accuracy);
        CHECK(by_group.at(0).support + by_group.at(1).support == 5);
    }

    SUBCASE("absent group is absent from the map") {
        std::vector<PredictionRecord> r{rec(1, 1, 0)};
        auto by_group = fair::per_group_metrics(r);
        CHECK(by_group.count(1) == 0);
    }
}

TEST_CASE("combined metrics report") {
    std::vector<PredictionRecord> r = tpr_fixture();
    fair::MetricsReport rep = fair::compute_metrics(r);
    CHECK(rep.f1 == fair::f1_accuracy(r).f1);
    CHECK(rep.eo_gap == doctest::Approx(0.35));
    int support = 0;
    for (const auto& [g, m] : rep.per_group) support += m.support;
    CHECK(support == static_cast<int>(r.size()));

    // one group: eo undefined, the rest still filled
    std::vector<PredictionRecord> solo{rec(1, 1, 0), rec(0, 0, 0)};
    fair::MetricsReport srep = fair::compute_metrics(solo);
    CHECK(std::isnan(srep.eo_gap));
    CHECK(srep.accuracy == 1.0);
}
