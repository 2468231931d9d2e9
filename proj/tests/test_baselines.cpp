#include <doctest.h>

#include <ns/baselines.hpp>
#include <ns/rng.hpp>

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(ns::Rng& rng, Eigen::Index n, Eigen::Index p) {
    MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.normal();
    return X;
}

} // namespace

TEST_CASE("zscore recovers a noiseless linear trend up to the residual floor") {
    ns::Rng rng(1);
    MatrixXd X = random_matrix(rng, 50, 2);
    VectorXd y = 2.0 * X.col(0) - X.col(1) + VectorXd::Constant(50, 3.0);
    // perturb one entry so the fit is not exact
    y[0] += 1.0;
    auto m = ns::zscore_fit(X, y);
    CHECK(m.weights[0] == doctest::Approx(2.0).epsilon(0.05));
    CHECK(m.weights[1] == doctest::Approx(-1.0).epsilon(0.05));
    CHECK(m.weights[2] == doctest::Approx(3.0).epsilon(0.05));
    // the perturbed row dominates the score ranking
    VectorXd s = ns::zscore_score(m, X, y).cwiseAbs();
    Eigen::Index best;
    s.maxCoeff(&best);
    CHECK(best == 0);
}

TEST_CASE("zscore hand example") {
    // y = x exactly except the last point; residuals (0,0,0,0,2), centered fit
    MatrixXd X(5, 1);
    X << 1, 2, 3, 4, 5;
    VectorXd y(5);
    y << 1, 2, 3, 4, 7;
    auto m = ns::zscore_fit(X, y);
    RowVectorXd q(1);
    q << 3.0;
    // OLS on this data: slope 1.4, intercept -0.8; at x=3 prediction is 3.4
    CHECK(m.weights[0] == doctest::Approx(1.4));
    CHECK(m.weights[1] == doctest::Approx(-0.8));
    double resid_sq = 0.0;
    for (int i = 0; i < 5; ++i) {
        double f = 1.4 * X(i, 0) - 0.8;
        resid_sq += (y[i] - f) * (y[i] - f);
    }
    CHECK(m.residual_std == doctest::Approx(std::sqrt(resid_sq / 5.0)));
    CHECK(ns::zscore_score(m, q, 3.4) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("zscore rejects degenerate designs and exact fits") {
    MatrixXd X(10, 2);
    X.col(0).setLinSpaced(10, 0, 9);
    X.col(1) = 2.0 * X.col(0); // collinear
    VectorXd y = VectorXd::Ones(10);
    CHECK_THROWS_AS(ns::zscore_fit(X, y), ns::DegenerateInputError);

    MatrixXd X2(10, 1);
    X2.col(0).setLinSpaced(10, 0, 9);
    VectorXd y2 = 3.0 * X2.col(0);
    auto m = ns::zscore_fit(X2, y2); // exact fit trains fine...
    RowVectorXd q(1);
    q << 1.0;
    CHECK_THROWS_AS(ns::zscore_score(m, q, 3.0), ns::DegenerateInputError); // ...but cannot score

    CHECK_THROWS_AS(ns::zscore_fit(MatrixXd::Zero(2, 2), VectorXd::Zero(2)), ns::ConfigError);
}

TEST_CASE("abs zscore is equivariant under affine feature maps") {
    ns::Rng rng(3);
    MatrixXd X = random_matrix(rng, 60, 2);
    VectorXd y = X.col(0) - 0.5 * X.col(1);
    for (int i = 0; i < 60; ++i) y[i] += 0.3 * rng.normal();

    MatrixXd Xa = X;
    Xa.col(0) = 3.0 * X.col(0).array() + 7.0;
    Xa.col(1) = -0.5 * X.col(1).array() + 1.0;

    auto s1 = ns::zscore_score(ns::zscore_fit(X, y), X, y);
    auto s2 = ns::zscore_score(ns::zscore_fit(Xa, y), Xa, y);
    CHECK((s1 - s2).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("iforest path-length normalizer matches the harmonic formula") {
    CHECK(ns::detail::iforest_c(1) == 0.0);
    CHECK(ns::detail::iforest_c(2) == doctest::Approx(1.0));
    // c(n) = 2 H_{n-1} - 2 (n-1)/n with H_255 computed directly
    double h = 0.0;
    for (int i = 1; i <= 255; ++i) h += 1.0 / i;
    CHECK(ns::detail::iforest_c(256) == doctest::Approx(2.0 * h - 2.0 * 255.0 / 256.0));
}

TEST_CASE("iforest isolates a far outlier in a tight cluster") {
    ns::Rng rng(5);
    MatrixXd X = random_matrix(rng, 200, 2) * 0.3;
    X.row(0) << 8.0, -8.0;
    auto m = ns::iforest_fit(X, 100, 256, 7);
    auto s = ns::iforest_score(m, X);
    Eigen::Index best;
    s.maxCoeff(&best);
    CHECK(best == 0);
    CHECK(s[0] > 0.6);          // short isolation path
    CHECK(s.segment(1, 199).mean() < 0.55); // cluster interior
    // scores live in (0, 1)
    CHECK(s.minCoeff() > 0.0);
    CHECK(s.maxCoeff() < 1.0);
}

TEST_CASE("iforest scoring is deterministic per seed") {
    ns::Rng rng(6);
    MatrixXd X = random_matrix(rng, 100, 3);
    auto s1 = ns::iforest_score(ns::iforest_fit(X, 50, 64, 11), X);
    auto s2 = ns::iforest_score(ns::iforest_fit(X, 50, 64, 11), X);
    auto s3 = ns::iforest_score(ns::iforest_fit(X, 50, 64, 12), X);
    CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s1 - s3).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lof of a uniform grid interior is close to one") {
    // training points on a 10x10 unit grid: every interior point has the
    // same local density as its neighbors
    MatrixXd X(100, 2);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) X(i * 10 + j, 0) = i, X(i * 10 + j, 1) = j;
    auto m = ns::lof_fit(X, 4);
    auto s = ns::lof_score(m, X);
    CHECK(s[5 * 10 + 5] == doctest::Approx(1.0).epsilon(0.05));
    // a distant query scores far above one
    MatrixXd q(1, 2);
    q << 30.0, 30.0;
    CHECK(ns::lof_score(m, q)[0] > 2.0);
}

TEST_CASE("lof matches a hand-computed 1-D example") {
    // train = {0, 1, 2, 10}, k = 2, self-matches excluded.
    // k-distances: kd(0)=2, kd(1)=1, kd(2)=2.
    //   lrd(1) = 2 / (max(1,kd(0)) + max(1,kd(2))) = 2/4 = 1/2
    //   lrd(2) = 2 / (max(1,kd(1)) + max(2,kd(0))) = 2/3
    // For the query at 10: neighbors 2 (d=8) and 1 (d=9),
    //   lrd(q) = 2 / (max(8,2) + max(9,1)) = 2/17
    //   LOF = ((2/3 + 1/2)/2) / (2/17) = (7/12)(17/2) = 119/24
    MatrixXd X(4, 1);
    X << 0, 1, 2, 10;
    auto m = ns::lof_fit(X, 2);
    auto s = ns::lof_score(m, X);
    CHECK(s[3] == doctest::Approx(119.0 / 24.0).epsilon(1e-12));
}

TEST_CASE("lof handles exact duplicates without dividing by zero") {
    MatrixXd X(30, 1);
    for (int i = 0; i < 30; ++i) X(i, 0) = i % 3; // ten copies of each of 0,1,2
    auto m = ns::lof_fit(X, 5);
    auto s = ns::lof_score(m, X);
    CHECK(s.allFinite());
    CHECK(s.maxCoeff() < 10.0);
    CHECK_THROWS_AS(ns::lof_fit(X, 30), ns::ConfigError);
    CHECK_THROWS_AS(ns::lof_score(m, MatrixXd::Zero(2, 3)), ns::DimensionError);
}

TEST_CASE("hbos hand example with two features") {
    // Feature 0: values 0..9, 10 bins of one point each -> density 1 everywhere.
    // Feature 1: nine zeros and one 9 -> bin 0 density 1, bin 9 density 1/9.
    MatrixXd X(10, 2);
    for (int i = 0; i < 10; ++i) X(i, 0) = i, X(i, 1) = (i == 9) ? 9.0 : 0.0;
    auto m = ns::hbos_fit(X, 10);
    auto s = ns::hbos_score(m, X);
    CHECK(s[0] == doctest::Approx(0.0).epsilon(1e-12));           // -log 1 - log 1
    CHECK(s[9] == doctest::Approx(std::log(9.0)).epsilon(1e-12)); // -log 1 - log(1/9)
}

TEST_CASE("hbos floors empty bins and out-of-range queries") {
    MatrixXd X(20, 1);
    X.col(0).setLinSpaced(20, 0.0, 1.0);
    auto m = ns::hbos_fit(X, 10);
    MatrixXd q(1, 1);
    q << 50.0;
    CHECK(ns::hbos_score(m, q)[0] == doctest::Approx(-std::log(1.0 / 21.0)));

    // constant feature: all mass in bin 0, scores still finite
    MatrixXd Xc = MatrixXd::Constant(15, 1, 4.0);
    auto mc = ns::hbos_fit(Xc, 10);
    CHECK(ns::hbos_score(mc, Xc).allFinite());
}

TEST_CASE("all detectors are permutation equivariant") {
    ns::Rng rng(9);
    const int n = 80;
    MatrixXd X = random_matrix(rng, n, 2);
    VectorXd y = X.col(0);
    for (int i = 0; i < n; ++i) y[i] += 0.2 * rng.normal();

    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    ns::Rng prng(10);
    prng.shuffle(perm);
    MatrixXd Xp(n, 2);
    VectorXd yp(n);
    for (int i = 0; i < n; ++i) Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]),
                                yp[i] = y[perm[static_cast<std::size_t>(i)]];

    auto z = ns::zscore_score(ns::zscore_fit(X, y), X, y);
    auto zp = ns::zscore_score(ns::zscore_fit(Xp, yp), Xp, yp);
    auto l = ns::lof_score(ns::lof_fit(X, 10), X);
    auto lp = ns::lof_score(ns::lof_fit(Xp, 10), Xp);
    auto h = ns::hbos_score(ns::hbos_fit(X), X);
    auto hp = ns::hbos_score(ns::hbos_fit(Xp), Xp);
    for (int i = 0; i < n; ++i) {
        auto src = perm[static_cast<std::size_t>(i)];
        CHECK(zp[i] == doctest::Approx(z[src]).epsilon(1e-9));
        CHECK(lp[i] == doctest::Approx(l[src]).epsilon(1e-9));
        CHECK(hp[i] == doctest::Approx(h[src]).epsilon(1e-9));
    }
}

TEST_CASE("zscore underrates anomalies in quiet regions of heteroscedastic data") {
    // the motivating failure: a global residual scale swamps deviations where
    // the local noise is small
    ns::Rng rng(12);
    const int n = 400;
    MatrixXd X(n, 1);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        double x = rng.uniform(0.0, 1.0);
        double sd = x < 0.5 ? 0.02 : 0.5;
        X(i, 0) = x;
        y[i] = sd * rng.normal();
    }
    auto m = ns::zscore_fit(X, y);
    // a 5-local-sigma deviation in the quiet half
    RowVectorXd q(1);
    q << 0.25;
    double z_quiet = std::abs(ns::zscore_score(m, q, 0.1));
    CHECK(z_quiet < 1.0); // invisible to the global scale
}
