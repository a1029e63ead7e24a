#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "crowddiff/schedule.hpp"

using namespace crowddiff;

TEST_CASE("single-step schedule degenerates to beta_start") {
    const NoiseSchedule s = build_schedule(1, 1e-3, 1e-3, 1.0, 0.5);
    CHECK(s.beta(1) == doctest::Approx(1e-3));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("T=1000 cumulative product matches the brute-force oracle") {
    const NoiseSchedule s = build_schedule(1000, 1e-3, 0.02, 1.0, 0.5);
    // Independent oracle: recompute the running product from the linear rule.
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        const double beta = 1e-3 + (t - 1) / 999.0 * (0.02 - 1e-3);
        prod *= 1.0 - beta;
        CHECK(std::abs(s.alpha_bar(t) - prod) <= 1e-12 * std::abs(prod));
    }
    // Frozen oracle value for the final step.
    const double expected = 2.565152050239755e-05;
    CHECK(std::abs(s.alpha_bar(1000) - expected) <= 1e-10 * expected);
}

TEST_CASE("lambda matches the hand-evaluated weighting example") {
    // alpha_bar = 0.999, beta = 1e-3, k = 1, gamma = 0.5:
    // SNR = 999, lambda = (0.999 * 0.001 / 0.001) / sqrt(1000)
    const NoiseSchedule s = build_schedule(1, 1e-3, 1e-3, 1.0, 0.5);
    const double want = 0.999 / std::sqrt(1000.0);
    CHECK(s.lambdas[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(weight_at(s, 1) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("weight_at equals recomputation from the defining formula") {
    const NoiseSchedule s = build_schedule(1000, 1e-3, 0.02, 1.0, 0.5);
    for (int t = 1; t <= 1000; ++t) {
        const double beta = s.beta(t);
        const double ab = s.alpha_bar(t);
        const double snr = ab / (1.0 - ab);
        const double lam = ((1.0 - beta) * (1.0 - ab) / beta) / std::pow(1.0 + snr, 0.5);
        CHECK(std::abs(weight_at(s, t) - lam) <= 1e-12 * std::abs(lam));
    }
}

TEST_CASE("large-k limit reduces to the unnormalized weighting") {
    const double k = 1e12;
    const NoiseSchedule s = build_schedule(100, 1e-3, 0.02, k, 0.5);
    for (int t : {1, 17, 50, 100}) {
        const double numer = (1.0 - s.beta(t)) * (1.0 - s.alpha_bar(t)) / s.beta(t);
        const double limit = numer * std::pow(k, -0.5);
        CHECK(weight_at(s, t) / limit == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("monotonicity and positivity invariants") {
    const NoiseSchedule s = build_schedule(1000, 1e-3, 0.02, 1.0, 0.5);
    for (int t = 1; t < 1000; ++t) {
        CHECK(s.beta(t) < s.beta(t + 1));
        CHECK(s.alpha_bar(t + 1) < s.alpha_bar(t));
        CHECK(s.snr(t + 1) < s.snr(t));
    }
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> pick(1, 999);
    for (int i = 0; i < 10; ++i) {
        const int t = pick(rng);
        CHECK(std::isfinite(weight_at(s, t)));
        CHECK(weight_at(s, t) > 0.0);
        CHECK(std::isfinite(weight_at(s, t + 1)));
        CHECK(weight_at(s, t + 1) > 0.0);
    }
    for (int t = 1; t <= 1000; ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) < 1.0);
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) < 1.0);
        CHECK(s.snr(t) > 0.0);
    }
}

TEST_CASE("invalid arguments are rejected") {
    CHECK_THROWS_AS(build_schedule(0, 1e-3, 0.02, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.02, 1e-3, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 1e-3, 1.0, 1.0, 0.5), std::invalid_argument);
    const NoiseSchedule s = build_schedule(10, 1e-3, 0.02, 1.0, 0.5);
    CHECK_THROWS_AS(weight_at(s, 0), std::out_of_range);
    CHECK_THROWS_AS(weight_at(s, 11), std::out_of_range);
    CHECK_THROWS_AS(s.alpha_bar(11), std::out_of_range);
}

TEST_CASE("config record rebuilds the schedule deterministically") {
    const NoiseSchedule s = build_schedule(250, 2e-3, 0.015, 1.5, 0.7);
    const NoiseSchedule r = NoiseSchedule::from_config_json(s.config_json());
    REQUIRE(r.num_steps == s.num_steps);
    for (int t = 1; t <= 250; ++t) {
        CHECK(r.beta(t) == s.beta(t));
        CHECK(r.alpha_bar(t) == s.alpha_bar(t));
        CHECK(r.lambdas[t - 1] == s.lambdas[t - 1]);
    }
}
