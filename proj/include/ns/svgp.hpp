#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ns/errors.hpp"
#include "ns/kernel.hpp"
#include "ns/linalg.hpp"

namespace ns {

struct LatentGPConfig {
    KernelSpec kernel;
    double prior_mean = 0.0;
    double inducing_ratio = 0.05;
    std::optional<Eigen::MatrixXd> fixed_inducing;
};

// Whitened variational posterior: inducing outputs are
// N(L q_mean + prior_mean, L q_sqrt q_sqrt^T L^T) with L = chol(Kuu).
struct VariationalPosterior {
    Eigen::MatrixXd inducing_inputs; // M x P
    Eigen::VectorXd q_mean;          // M
    Eigen::MatrixXd q_sqrt;          // M x M lower triangular, positive diagonal
};

struct LatentState {
    LatentGPConfig cfg;
    VariationalPosterior post;

    Eigen::Index m() const { return post.inducing_inputs.rows(); }
    Eigen::Index p() const { return post.inducing_inputs.cols(); }
};

struct TrainStats {
    double final_elbo = 0.0;
    double initial_elbo = 0.0;
    int epochs = 0;
    double elapsed_seconds = 0.0;
    bool warning_non_improving = false;
};

// The trained artifact: f1 models the mean of y, f2 its log standard deviation.
struct HetGPModel {
    LatentState latent_mean;
    LatentState latent_logstd;
    TrainStats train_stats;
};

struct LatentPrediction {
    double m1 = 0.0, s1_sq = 0.0;
    double m2 = 0.0, s2_sq = 0.0;
};

struct TrainConfig {
    int max_epochs = 40000;
    double adam_lr = 0.01;
    double natgrad_gamma = 0.02;
    bool natgrad_enabled = true;
    double convergence_tol = 1e-7;
    int convergence_window = 200;
    bool optimize_hyperparameters = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (!(adam_lr > 0.0) || !(natgrad_gamma > 0.0))
            throw ConfigError("learning rates must be positive");
    }
};

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

// Per-latent forward pass at arbitrary query points.
struct LatentForward {
    Eigen::MatrixXd L;  // chol(Kuu + jitter I)
    Eigen::MatrixXd A;  // L^-1 Kuf, M x N
    Eigen::VectorXd mu; // posterior mean per query
    Eigen::VectorXd var;// posterior variance per query
    double kl = 0.0;
    double jitter = 0.0;
};

inline LatentForward latent_forward(const LatentState& st, const Eigen::MatrixXd& Xstar) {
    if (Xstar.cols() != st.p())
        throw DimensionError(static_cast<int>(st.p()), static_cast<int>(Xstar.cols()));
    const auto& Z = st.post.inducing_inputs;
    const auto& C = st.post.q_sqrt;
    const auto& m = st.post.q_mean;

    LatentForward f;
    Eigen::MatrixXd Kuu = kernel_eval(st.cfg.kernel, Z, Z).entries;
    auto chol = cholesky_with_jitter(Kuu);
    f.L = std::move(chol.L);
    f.jitter = chol.jitter;
    Eigen::MatrixXd Kuf = kernel_eval(st.cfg.kernel, Z, Xstar).entries;
    f.A = f.L.triangularView<Eigen::Lower>().solve(Kuf);

    f.mu = (f.A.transpose() * m).array() + st.cfg.prior_mean;
    Eigen::MatrixXd B = C.triangularView<Eigen::Lower>().transpose() * f.A;
    f.var = (st.cfg.kernel.variance - f.A.colwise().squaredNorm().array() +
             B.colwise().squaredNorm().array())
                .matrix();

    double logdet = C.diagonal().array().log().sum();
    f.kl = 0.5 * (C.squaredNorm() + m.squaredNorm() - static_cast<double>(st.m())) - logdet;
    return f;
}

struct LatentGrad {
    double d_variance = 0.0;
    double d_alpha = 0.0;
    Eigen::VectorXd d_lengthscales;
    Eigen::MatrixXd d_inducing;
    Eigen::VectorXd d_qmean;
    Eigen::MatrixXd d_qsqrt; // lower triangular
    Eigen::MatrixXd ell_dS;  // d(ELL)/dS, used by the natural-gradient step
};

// Pullback of the data term plus KL through one latent. g_mu, g_s are
// d(ELL)/d(mu_i) and d(ELL)/d(var_i) per query point.
inline LatentGrad latent_backward(const LatentState& st, const Eigen::MatrixXd& Xstar,
                                  const LatentForward& f, const Eigen::VectorXd& g_mu,
                                  const Eigen::VectorXd& g_s) {
    const auto& Z = st.post.inducing_inputs;
    const auto& C = st.post.q_sqrt;
    const auto& m = st.post.q_mean;
    const auto M = st.m();

    LatentGrad g;
    Eigen::MatrixXd S = C * C.transpose();
    Eigen::MatrixXd Ags = f.A * g_s.asDiagonal();
    Eigen::MatrixXd T = Ags * f.A.transpose(); // d(ELL)/dS
    g.ell_dS = 0.5 * (T + T.transpose().eval());

    g.d_qmean = f.A * g_mu - m;
    Eigen::MatrixXd SmI = S - Eigen::MatrixXd::Identity(M, M);
    Eigen::MatrixXd dC = 2.0 * (g.ell_dS * C);
    dC -= C; // KL: d/dC of 0.5||C||^2
    dC.diagonal() += C.diagonal().cwiseInverse(); // KL: -sum log C_ii
    g.d_qsqrt = dC.triangularView<Eigen::Lower>();

    Eigen::MatrixXd Abar = m * g_mu.transpose() + 2.0 * (SmI * Ags);
    Eigen::MatrixXd Kuf_bar = f.L.triangularView<Eigen::Lower>().transpose().solve(Abar);
    Eigen::MatrixXd Lbar = -(Kuf_bar * f.A.transpose());
    Lbar = Lbar.triangularView<Eigen::Lower>();
    Eigen::MatrixXd Kuu_bar = cholesky_backward(f.L, Lbar);

    KernelGrads cross = kernel_backward(st.cfg.kernel, Z, Xstar, Kuf_bar);
    KernelGrads self = kernel_backward(st.cfg.kernel, Z, Z, Kuu_bar);
    g.d_variance = cross.d_variance + self.d_variance + g_s.sum(); // g_s.sum(): kdiag term
    g.d_alpha = cross.d_alpha + self.d_alpha;
    g.d_lengthscales = cross.d_lengthscales + self.d_lengthscales;
    g.d_inducing = cross.d_first + 2.0 * self.d_first;
    return g;
}

// Expected log-likelihood of the heteroscedastic Gaussian model, exact via the
// log-normal moment E[e^{-2 f2}] = e^{-2 m2 + 2 s2}.
struct EllTerms {
    double total = 0.0;
    Eigen::VectorXd g_mu1, g_s1, g_mu2, g_s2;
};

inline EllTerms expected_log_lik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu1,
                                 const Eigen::VectorXd& s1, const Eigen::VectorXd& mu2,
                                 const Eigen::VectorXd& s2) {
    const auto N = y.size();
    constexpr double half_log_2pi = 0.91893853320467274178032973640562;
    EllTerms t;
    t.g_mu1.resize(N);
    t.g_s1.resize(N);
    t.g_mu2.resize(N);
    t.g_s2.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        double E = std::exp(-2.0 * mu2[i] + 2.0 * s2[i]);
        double r = y[i] - mu1[i];
        double R = r * r + s1[i];
        double ell = -half_log_2pi - mu2[i] - 0.5 * R * E;
        if (!std::isfinite(ell)) throw NumericalError("non-finite expected log-likelihood", i);
        t.total += ell;
        t.g_mu1[i] = r * E;
        t.g_s1[i] = -0.5 * E;
        t.g_mu2[i] = -1.0 + R * E;
        t.g_s2[i] = -R * E;
    }
    return t;
}

inline HetGPModel init_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             LatentGPConfig cfg_mean, LatentGPConfig cfg_logstd) {
    const auto N = X.rows(), P = X.cols();
    if (N < 2) throw ConfigError("init_model needs at least 2 points");
    if (!X.allFinite() || !y.allFinite()) throw ConfigError("init_model: non-finite inputs");

    auto build = [&](LatentGPConfig cfg, double variance) {
        Eigen::MatrixXd Z;
        if (cfg.fixed_inducing) {
            Z = *cfg.fixed_inducing;
            if (Z.cols() != P) throw DimensionError(static_cast<int>(P), static_cast<int>(Z.cols()));
        } else {
            if (cfg.inducing_ratio * static_cast<double>(N) < 1.0)
                throw ConfigError("inducing_ratio * N below 1");
            auto M = std::max<Eigen::Index>(
                1, static_cast<Eigen::Index>(std::lround(cfg.inducing_ratio * static_cast<double>(N))));
            Z = X.topRows(M);
        }
        cfg.kernel.variance = variance;
        cfg.kernel.lengthscales = Eigen::VectorXd::Ones(P);
        LatentState st;
        st.cfg = std::move(cfg);
        st.post.inducing_inputs = std::move(Z);
        st.post.q_mean = Eigen::VectorXd::Zero(st.post.inducing_inputs.rows());
        st.post.q_sqrt =
            Eigen::MatrixXd::Identity(st.post.inducing_inputs.rows(), st.post.inducing_inputs.rows());
        return st;
    };

    double yvar = (y.array() - y.mean()).square().mean();
    HetGPModel model;
    model.latent_mean = build(std::move(cfg_mean), std::max(yvar, 1e-6));
    cfg_logstd.prior_mean = 0.0;
    model.latent_logstd = build(std::move(cfg_logstd), 1e-5);
    return model;
}

inline double elbo(const HetGPModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    LatentForward f1 = latent_forward(model.latent_mean, X);
    LatentForward f2 = latent_forward(model.latent_logstd, X);
    EllTerms ell = expected_log_lik(y, f1.mu, f1.var, f2.mu, f2.var);
    return ell.total - f1.kl - f2.kl;
}

struct ElboGradients {
    double value = 0.0;
    LatentForward fwd_mean, fwd_logstd;
    LatentGrad grad_mean, grad_logstd;
};

inline ElboGradients elbo_with_grad(const HetGPModel& model, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y) {
    ElboGradients out;
    out.fwd_mean = latent_forward(model.latent_mean, X);
    out.fwd_logstd = latent_forward(model.latent_logstd, X);
    EllTerms ell = expected_log_lik(y, out.fwd_mean.mu, out.fwd_mean.var, out.fwd_logstd.mu,
                                    out.fwd_logstd.var);
    out.value = ell.total - out.fwd_mean.kl - out.fwd_logstd.kl;
    out.grad_mean = latent_backward(model.latent_mean, X, out.fwd_mean, ell.g_mu1, ell.g_s1);
    out.grad_logstd = latent_backward(model.latent_logstd, X, out.fwd_logstd, ell.g_mu2, ell.g_s2);
    return out;
}

// Sparse posterior of both latents at query rows.
inline std::vector<LatentPrediction> predict_latents(const HetGPModel& model,
                                                     const Eigen::MatrixXd& Xstar) {
    LatentForward f1 = latent_forward(model.latent_mean, Xstar);
    LatentForward f2 = latent_forward(model.latent_logstd, Xstar);
    std::vector<LatentPrediction> out(static_cast<std::size_t>(Xstar.rows()));
    for (Eigen::Index i = 0; i < Xstar.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = {f1.mu[i], std::max(f1.var[i], 0.0), f2.mu[i],
                                            std::max(f2.var[i], 0.0)};
    }
    return out;
}

// --- unconstrained parameter vector (softplus for positives) ------------------

struct ParamLayout {
    bool train_alpha = false;
    bool include_q = true;
    bool train_hypers = true;
    Eigen::Index m = 0, p = 0;

    Eigen::Index hyper_size() const {
        return train_hypers ? 1 + p + (train_alpha ? 1 : 0) + m * p : 0;
    }
    Eigen::Index q_size() const { return include_q ? m + m * (m + 1) / 2 : 0; }
    Eigen::Index size() const { return hyper_size() + q_size(); }

    static ParamLayout of(const LatentState& st, bool include_q, bool train_hypers = true) {
        ParamLayout l;
        l.train_alpha = st.cfg.kernel.family == KernelFamily::RationalQuadratic;
        l.include_q = include_q;
        l.train_hypers = train_hypers;
        l.m = st.m();
        l.p = st.p();
        return l;
    }
};

inline void pack_latent(const LatentState& st, const ParamLayout& l, double* out) {
    Eigen::Index k = 0;
    if (l.train_hypers) {
        out[k++] = detail::softplus_inv(st.cfg.kernel.variance);
        for (Eigen::Index d = 0; d < l.p; ++d)
            out[k++] = detail::softplus_inv(st.cfg.kernel.lengthscales[d]);
        if (l.train_alpha) out[k++] = detail::softplus_inv(st.cfg.kernel.alpha);
        for (Eigen::Index i = 0; i < l.m; ++i)
            for (Eigen::Index d = 0; d < l.p; ++d) out[k++] = st.post.inducing_inputs(i, d);
    }
    if (l.include_q) {
        for (Eigen::Index i = 0; i < l.m; ++i) out[k++] = st.post.q_mean[i];
        for (Eigen::Index j = 0; j < l.m; ++j)
            for (Eigen::Index i = j; i < l.m; ++i)
                out[k++] = (i == j) ? detail::softplus_inv(st.post.q_sqrt(i, j))
                                    : st.post.q_sqrt(i, j);
    }
}

inline void unpack_latent(LatentState& st, const ParamLayout& l, const double* in) {
    Eigen::Index k = 0;
    if (l.train_hypers) {
        st.cfg.kernel.variance = detail::softplus(in[k++]);
        for (Eigen::Index d = 0; d < l.p; ++d)
            st.cfg.kernel.lengthscales[d] = detail::softplus(in[k++]);
        if (l.train_alpha) st.cfg.kernel.alpha = detail::softplus(in[k++]);
        for (Eigen::Index i = 0; i < l.m; ++i)
            for (Eigen::Index d = 0; d < l.p; ++d) st.post.inducing_inputs(i, d) = in[k++];
    }
    if (l.include_q) {
        for (Eigen::Index i = 0; i < l.m; ++i) st.post.q_mean[i] = in[k++];
        for (Eigen::Index j = 0; j < l.m; ++j)
            for (Eigen::Index i = j; i < l.m; ++i)
                st.post.q_sqrt(i, j) = (i == j) ? detail::softplus(in[k]) : in[k], ++k;
    }
}

// Chain rule from constrained-space gradients to the packed raw vector.
inline void grad_to_raw(const LatentState& st, const ParamLayout& l, const LatentGrad& g,
                        double* out) {
    Eigen::Index k = 0;
    if (l.train_hypers) {
        out[k++] = g.d_variance * detail::sigmoid(detail::softplus_inv(st.cfg.kernel.variance));
        for (Eigen::Index d = 0; d < l.p; ++d)
            out[k++] = g.d_lengthscales[d] *
                       detail::sigmoid(detail::softplus_inv(st.cfg.kernel.lengthscales[d]));
        if (l.train_alpha)
            out[k++] = g.d_alpha * detail::sigmoid(detail::softplus_inv(st.cfg.kernel.alpha));
        for (Eigen::Index i = 0; i < l.m; ++i)
            for (Eigen::Index d = 0; d < l.p; ++d) out[k++] = g.d_inducing(i, d);
    }
    if (l.include_q) {
        for (Eigen::Index i = 0; i < l.m; ++i) out[k++] = g.d_qmean[i];
        for (Eigen::Index j = 0; j < l.m; ++j)
            for (Eigen::Index i = j; i < l.m; ++i)
                out[k++] = (i == j) ? g.d_qsqrt(i, j) * detail::sigmoid(detail::softplus_inv(
                                                            st.post.q_sqrt(i, j)))
                                    : g.d_qsqrt(i, j);
    }
}

} // namespace ns
