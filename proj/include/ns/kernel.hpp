#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "ns/errors.hpp"
#include "ns/linalg.hpp"

namespace ns {

enum class KernelFamily { RationalQuadratic, Matern52, RBF };

inline std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::RationalQuadratic: return "rq";
        case KernelFamily::Matern52: return "matern52";
        case KernelFamily::RBF: return "rbf";
    }
    return "?";
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "rq" || s == "rationalquadratic") return KernelFamily::RationalQuadratic;
    if (s == "matern52") return KernelFamily::Matern52;
    if (s == "rbf") return KernelFamily::RBF;
    throw ConfigError("unknown kernel family: " + s);
}

// Stationary ARD kernel. alpha is the Rational Quadratic shape parameter,
// ignored by the other families.
struct KernelSpec {
    KernelFamily family = KernelFamily::RationalQuadratic;
    double variance = 1.0;
    Eigen::VectorXd lengthscales; // one per contextual dimension
    double alpha = 1.0;

    void validate() const {
        if (!(variance > 0.0)) throw ConfigError("kernel variance must be positive");
        if (!(alpha > 0.0)) throw ConfigError("kernel alpha must be positive");
        if ((lengthscales.array() <= 0.0).any())
            throw ConfigError("kernel lengthscales must be positive");
    }
};

struct GramMatrix {
    Eigen::MatrixXd entries;
    double jitter_applied = 0.0;
};

namespace detail {

constexpr double kSqrt5 = 2.2360679774997896964091736687747;

// Squared scaled distance matrix r2(i,j) = sum_d (a_id - b_jd)^2 / l_d^2
inline Eigen::MatrixXd scaled_sqdist(const KernelSpec& spec, const Eigen::MatrixXd& A,
                                     const Eigen::MatrixXd& B) {
    Eigen::MatrixXd As = A * spec.lengthscales.cwiseInverse().asDiagonal();
    Eigen::MatrixXd Bs = B * spec.lengthscales.cwiseInverse().asDiagonal();
    Eigen::VectorXd an = As.rowwise().squaredNorm();
    Eigen::VectorXd bn = Bs.rowwise().squaredNorm();
    Eigen::MatrixXd r2 = -2.0 * (As * Bs.transpose());
    r2.colwise() += an;
    r2.rowwise() += bn.transpose();
    return r2.cwiseMax(0.0);
}

inline double value_from_r2(const KernelSpec& s, double r2) {
    switch (s.family) {
        case KernelFamily::RBF:
            return s.variance * std::exp(-0.5 * r2);
        case KernelFamily::Matern52: {
            double r = std::sqrt(r2);
            return s.variance * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
        }
        case KernelFamily::RationalQuadratic:
            return s.variance * std::pow(1.0 + r2 / (2.0 * s.alpha), -s.alpha);
    }
    return 0.0;
}

// dk/d(r2); finite at r2 = 0 for all three families
inline double dvalue_dr2(const KernelSpec& s, double r2) {
    switch (s.family) {
        case KernelFamily::RBF:
            return -0.5 * s.variance * std::exp(-0.5 * r2);
        case KernelFamily::Matern52: {
            double r = std::sqrt(r2);
            return s.variance * std::exp(-kSqrt5 * r) * (-5.0 / 6.0) * (1.0 + kSqrt5 * r);
        }
        case KernelFamily::RationalQuadratic:
            return -0.5 * s.variance * std::pow(1.0 + r2 / (2.0 * s.alpha), -s.alpha - 1.0);
    }
    return 0.0;
}

// dk/d(alpha), Rational Quadratic only
inline double dvalue_dalpha(const KernelSpec& s, double r2) {
    double t = r2 / (2.0 * s.alpha);
    double k = s.variance * std::pow(1.0 + t, -s.alpha);
    return k * (-std::log1p(t) + t / (1.0 + t));
}

} // namespace detail

// Closed-form kernel matrix between two point sets (rows are points).
inline GramMatrix kernel_eval(const KernelSpec& spec, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
    spec.validate();
    if (A.cols() != spec.lengthscales.size())
        throw DimensionError(static_cast<int>(spec.lengthscales.size()), static_cast<int>(A.cols()));
    if (B.cols() != spec.lengthscales.size())
        throw DimensionError(static_cast<int>(spec.lengthscales.size()), static_cast<int>(B.cols()));
    Eigen::MatrixXd r2 = detail::scaled_sqdist(spec, A, B);
    GramMatrix out;
    out.entries = r2.unaryExpr([&](double v) { return detail::value_from_r2(spec, v); });
    // exact diagonal for a set against itself
    if (&A == &B || (A.rows() == B.rows() && A.isApprox(B))) {
        out.entries.diagonal().setConstant(spec.variance);
        out.entries = 0.5 * (out.entries + out.entries.transpose().eval());
    }
    return out;
}

struct KernelGrads {
    double d_variance = 0.0;
    double d_alpha = 0.0;
    Eigen::VectorXd d_lengthscales;
    Eigen::MatrixXd d_first; // gradient w.r.t. the rows of A
};

// Pullback of kernel_eval: given dLoss/dK for K = k(A, B), accumulate gradients
// w.r.t. hyperparameters and the first point set. For a symmetric self-Gram
// (A == B, Kbar symmetric) the caller doubles d_first.
inline KernelGrads kernel_backward(const KernelSpec& spec, const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B, const Eigen::MatrixXd& Kbar) {
    const auto P = spec.lengthscales.size();
    Eigen::MatrixXd r2 = detail::scaled_sqdist(spec, A, B);
    Eigen::MatrixXd K = r2.unaryExpr([&](double v) { return detail::value_from_r2(spec, v); });
    Eigen::MatrixXd G = Kbar.cwiseProduct(
        r2.unaryExpr([&](double v) { return detail::dvalue_dr2(spec, v); }));

    KernelGrads g;
    g.d_variance = Kbar.cwiseProduct(K).sum() / spec.variance;
    if (spec.family == KernelFamily::RationalQuadratic) {
        g.d_alpha = Kbar.cwiseProduct(
                        r2.unaryExpr([&](double v) { return detail::dvalue_dalpha(spec, v); }))
                        .sum();
    }

    Eigen::VectorXd row_sum = G.rowwise().sum();
    Eigen::VectorXd col_sum = G.colwise().sum();
    Eigen::MatrixXd GB = G * B; // (nA x P)

    g.d_lengthscales.resize(P);
    for (Eigen::Index d = 0; d < P; ++d) {
        double l = spec.lengthscales[d];
        double s = A.col(d).cwiseAbs2().dot(row_sum) - 2.0 * A.col(d).dot(GB.col(d)) +
                   B.col(d).cwiseAbs2().dot(col_sum);
        g.d_lengthscales[d] = -2.0 / (l * l * l) * s;
    }

    g.d_first.resize(A.rows(), P);
    for (Eigen::Index d = 0; d < P; ++d) {
        double inv_l2 = 1.0 / (spec.lengthscales[d] * spec.lengthscales[d]);
        g.d_first.col(d) = 2.0 * inv_l2 * (A.col(d).cwiseProduct(row_sum) - GB.col(d));
    }
    return g;
}

} // namespace ns
