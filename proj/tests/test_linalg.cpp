#include <doctest.h>

#include <ns/linalg.hpp>
#include <ns/rng.hpp>

using Eigen::MatrixXd;

TEST_CASE("identity factors with zero jitter") {
    auto r = ns::cholesky_with_jitter(MatrixXd::Identity(3, 3));
    CHECK(r.jitter == 0.0);
    CHECK((r.L - MatrixXd::Identity(3, 3)).norm() == doctest::Approx(0.0));
}

TEST_CASE("hand-worked 2x2 factor") {
    MatrixXd M(2, 2);
    M << 4, 2, 2, 3;
    auto r = ns::cholesky_with_jitter(M);
    CHECK(r.L(0, 0) == doctest::Approx(2.0));
    CHECK(r.L(1, 0) == doctest::Approx(1.0));
    CHECK(r.L(1, 1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(r.L(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("indefinite matrix fails with the final jitter attached") {
    MatrixXd M(2, 2);
    M << 1, 2, 2, 1; // eigenvalue -1, beyond any small jitter
    CHECK_THROWS_AS(ns::cholesky_with_jitter(M, 3), ns::FactorizationError);
}

TEST_CASE("reconstruction error stays within 1e-8 relative Frobenius") {
    ns::Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform_index(8));
        MatrixXd B(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) B(i, j) = rng.normal();
        MatrixXd M = B * B.transpose();
        auto r = ns::cholesky_with_jitter(M);
        MatrixXd rec = r.L * r.L.transpose();
        MatrixXd target = M + r.jitter * MatrixXd::Identity(n, n);
        CHECK((rec - target).norm() / target.norm() < 1e-8);
    }
}

TEST_CASE("cholesky pullback matches finite differences") {
    ns::Rng rng(11);
    const int n = 4;
    MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) = rng.normal();
    MatrixXd A = B * B.transpose() + 0.5 * n * MatrixXd::Identity(n, n);

    MatrixXd W(n, n); // arbitrary loss weights on L
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) W(i, j) = rng.normal();
    W = W.triangularView<Eigen::Lower>();

    auto loss = [&](const MatrixXd& M) {
        Eigen::LLT<MatrixXd> llt(M);
        MatrixXd L = llt.matrixL();
        return W.cwiseProduct(L).sum();
    };

    MatrixXd L = Eigen::LLT<MatrixXd>(A).matrixL();
    MatrixXd Abar = ns::cholesky_backward(L, W);

    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            MatrixXd Ap = A, Am = A;
            Ap(i, j) += h;
            Am(i, j) -= h;
            if (i != j) { Ap(j, i) += h; Am(j, i) -= h; }
            double fd = (loss(Ap) - loss(Am)) / (2 * h);
            double an = (i == j) ? Abar(i, j) : Abar(i, j) + Abar(j, i);
            CHECK(an == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}
