#include <doctest.h>

#include <ns/kde.hpp>
#include <ns/rng.hpp>

using Eigen::VectorXd;

TEST_CASE("standard normal density recovered at the mode") {
    ns::Rng rng(1);
    VectorXd s(10000);
    for (int i = 0; i < s.size(); ++i) s[i] = rng.normal();
    auto kde = ns::kde_build(s, ns::BandwidthRule::Silverman);
    // nearest grid point to 0
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < kde.grid.size(); ++i)
        if (std::abs(kde.grid[i]) < std::abs(kde.grid[best])) best = i;
    CHECK(kde.density_values[best] == doctest::Approx(0.3989).epsilon(0.08));
    CHECK(std::abs(kde.density_values[best] - 0.3989) < 0.03);
}

TEST_CASE("all-equal samples are rejected") {
    VectorXd s = VectorXd::Constant(50, 3.14);
    CHECK_THROWS_AS(ns::kde_build(s, ns::BandwidthRule::Silverman), ns::DegenerateInputError);
}

TEST_CASE("too few samples are rejected") {
    VectorXd s(5);
    s << 1, 2, 3, 4, 5;
    CHECK_THROWS_AS(ns::kde_build(s, ns::BandwidthRule::Silverman), ns::DegenerateInputError);
}

TEST_CASE("fixed bandwidth density integrates to one") {
    ns::Rng rng(2);
    VectorXd s(2000);
    for (int i = 0; i < s.size(); ++i) s[i] = rng.uniform(-1.0, 4.0);
    auto kde = ns::kde_build(s, ns::BandwidthRule::Fixed, 0.25);
    CHECK(kde.bandwidth == 0.25);
    CHECK(std::abs(kde.trapezoid_integral() - 1.0) < 0.02);
}

TEST_CASE("density invariants: nonnegative, normalized, grid spans samples plus 3h") {
    ns::Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        VectorXd s(500);
        for (int i = 0; i < s.size(); ++i) s[i] = rng.normal(rng.uniform(-2, 2), 0.3 + rng.uniform());
        auto kde = ns::kde_build(s, ns::BandwidthRule::Silverman);
        CHECK((kde.density_values.array() >= 0.0).all());
        double integral = kde.trapezoid_integral();
        CHECK(integral >= 0.98);
        CHECK(integral <= 1.001);
        CHECK(kde.grid[0] == doctest::Approx(s.minCoeff() - 3 * kde.bandwidth));
        CHECK(kde.grid[kde.grid.size() - 1] == doctest::Approx(s.maxCoeff() + 3 * kde.bandwidth));
    }
}
