#include <doctest.h>

#include "escape/selector.hpp"
#include "support/test_util.hpp"

using namespace escape;

namespace {

// Direct-sum reference; overflows for large coordinates, which is the point.
double naive_lse(const Pose& p) {
    double sum = 0.0;
    for (const auto& j : p.joints) sum += std::exp(j.x) + std::exp(j.y) + std::exp(j.z);
    return std::log(sum);
}

} // namespace

TEST_CASE("energy_score examples") {
    SUBCASE("all-zero pose gives ln(51)") {
        const Pose zero(17);
        CHECK(std::abs(energy_score(zero) - std::log(51.0)) < 1e-12);
    }
    SUBCASE("a dominant coordinate pins the score") {
        Pose p(17);
        p.joints[4].y = 1000.0;
        CHECK(energy_score(p) == doctest::Approx(1000.0).epsilon(1e-9));
    }
    SUBCASE("constant pose shifts by the constant") {
        Pose p(17);
        for (auto& j : p.joints) j = {800.0, 800.0, 800.0};
        CHECK(energy_score(p) == doctest::Approx(800.0 + std::log(51.0)).epsilon(1e-12));
    }
    SUBCASE("no overflow at extreme magnitudes") {
        Pose p(17);
        for (auto& j : p.joints) j = {1e6, -1e6, 5e5};
        CHECK(std::isfinite(energy_score(p)));
    }
    SUBCASE("non-finite pose rejected") {
        Pose p(17);
        p.joints[0].z = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(energy_score(p), InvalidPoseError);
    }
}

TEST_CASE("energy_score properties") {
    Rng rng(44);
    SUBCASE("shift identity") {
        for (int i = 0; i < 100; ++i) {
            const Pose p = testutil::random_pose(rng, 17, 5.0);
            const double c = rng.uniform(-50.0, 50.0);
            Pose shifted = p;
            for (auto& j : shifted.joints) j += {c, c, c};
            CHECK(std::abs(energy_score(shifted) - (energy_score(p) + c)) < 1e-9);
        }
    }
    SUBCASE("monotone in any single coordinate") {
        for (int i = 0; i < 50; ++i) {
            Pose p = testutil::random_pose(rng, 17, 3.0);
            const double before = energy_score(p);
            p.joints[i % 17].x += 0.5;
            CHECK(energy_score(p) > before);
        }
    }
    SUBCASE("stable form equals the naive form when the naive form is safe") {
        for (int i = 0; i < 100; ++i) {
            const Pose p = testutil::random_pose(rng, 17, 20.0);
            CHECK(std::abs(energy_score(p) - naive_lse(p)) < 1e-9);
        }
    }
}

TEST_CASE("classify") {
    SUBCASE("score below threshold with ood_below direction") {
        const EnergyDecision d = classify(700.0, 800.0, OodDirection::ood_below);
        CHECK(d.is_ood);
        CHECK(d.score == 700.0);
        CHECK(d.threshold_used == 800.0);
    }
    SUBCASE("tie stays in-distribution") {
        CHECK_FALSE(classify(800.0, 800.0, OodDirection::ood_below).is_ood);
        CHECK_FALSE(classify(800.0, 800.0, OodDirection::ood_above).is_ood);
    }
    SUBCASE("score above threshold with ood_below direction") {
        CHECK_FALSE(classify(900.0, 800.0, OodDirection::ood_below).is_ood);
    }
    SUBCASE("direction flips the comparison") {
        CHECK(classify(900.0, 800.0, OodDirection::ood_above).is_ood);
        CHECK_FALSE(classify(700.0, 800.0, OodDirection::ood_above).is_ood);
    }
    SUBCASE("pure function: identical inputs, identical decisions") {
        const EnergyDecision a = classify(812.5, 800.0, OodDirection::ood_below);
        const EnergyDecision b = classify(812.5, 800.0, OodDirection::ood_below);
        CHECK(a.is_ood == b.is_ood);
        CHECK(a.score == b.score);
    }
}

TEST_CASE("random_selector") {
    SUBCASE("rate 0 never selects") {
        RandomSelector rs(0.0, 99);
        for (int i = 0; i < 1000; ++i) CHECK_FALSE(rs.next());
    }
    SUBCASE("rate 1 always selects") {
        RandomSelector rs(1.0, 99);
        for (int i = 0; i < 1000; ++i) CHECK(rs.next());
    }
    SUBCASE("empirical rate within the binomial 3-sigma interval") {
        RandomSelector rs(0.2, 1234);
        int count = 0;
        for (int i = 0; i < 10000; ++i) count += rs.next() ? 1 : 0;
        CHECK(count >= 1880);
        CHECK(count <= 2120);
    }
    SUBCASE("seeded streams repeat") {
        RandomSelector a(0.5, 7), b(0.5, 7);
        for (int i = 0; i < 200; ++i) CHECK(a.next() == b.next());
    }
    SUBCASE("rate outside [0,1] rejected") {
        CHECK_THROWS_AS(RandomSelector(1.5, 0), ArgumentError);
    }
}
