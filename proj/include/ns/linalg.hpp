#pragma once

#include <Eigen/Dense>

#include "ns/errors.hpp"

namespace ns {

struct CholeskyResult {
    Eigen::MatrixXd L;   // lower-triangular factor of M + jitter*I
    double jitter = 0.0; // amount actually added to the diagonal
};

// Attempts a plain Cholesky first, then escalates jitter 1e-8, 1e-7, ...
// for max_tries attempts before giving up.
inline CholeskyResult cholesky_with_jitter(const Eigen::MatrixXd& M, int max_tries = 6) {
    double jitter = 0.0;
    for (int attempt = 0; attempt <= max_tries; ++attempt) {
        Eigen::MatrixXd A = M;
        if (jitter > 0.0) A.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() == Eigen::Success) {
            // LLT can report success on marginal matrices; insist the factor is usable.
            Eigen::MatrixXd L = llt.matrixL();
            if ((L.diagonal().array() > 0.0).all()) return {std::move(L), jitter};
        }
        jitter = (jitter == 0.0) ? 1e-8 : jitter * 10.0;
    }
    throw FactorizationError(jitter / 10.0);
}

// Reverse-mode sensitivity of A = L L^T given dLoss/dL (lower triangular).
// Returns the symmetric dLoss/dA. Reference: Murray, "Differentiation of
// the Cholesky decomposition" (2016), level-3 identity.
inline Eigen::MatrixXd cholesky_backward(const Eigen::MatrixXd& L, const Eigen::MatrixXd& Lbar) {
    const auto n = L.rows();
    Eigen::MatrixXd P = L.transpose() * Lbar;
    // Phi: lower triangle with halved diagonal
    Eigen::MatrixXd Phi = P.triangularView<Eigen::Lower>();
    Phi.diagonal() *= 0.5;
    Eigen::MatrixXd S = Phi + Phi.transpose();
    // Abar = 0.5 * L^-T * S * L^-1
    Eigen::MatrixXd tmp = L.triangularView<Eigen::Lower>().transpose().solve(S);
    Eigen::MatrixXd Abar =
        L.triangularView<Eigen::Lower>().transpose().solve(tmp.transpose()).transpose();
    Abar *= 0.5;
    return 0.5 * (Abar + Abar.transpose().eval());
}

} // namespace ns
