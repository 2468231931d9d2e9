#pragma once

#include <algorithm>
#include <chrono>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ns/svgp.hpp"

namespace ns {

namespace detail {

class Adam {
public:
    Adam(Eigen::Index n, double lr) : lr_(lr), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    // Ascent step (gradients point uphill).
    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
        ++t_;
        m_ = 0.9 * m_ + 0.1 * grad;
        v_ = 0.999 * v_ + 0.001 * grad.cwiseAbs2();
        double bc1 = 1.0 - std::pow(0.9, t_);
        double bc2 = 1.0 - std::pow(0.999, t_);
        theta += lr_ * (m_ / bc1).cwiseQuotient(((v_ / bc2).cwiseSqrt().array() + 1e-8).matrix());
    }

private:
    double lr_;
    long t_ = 0;
    Eigen::VectorXd m_, v_;
};

// One natural-gradient ascent step on the Gaussian q of a single latent.
// Steps the natural parameters by gamma times the expectation-parameter
// gradient; backs off gamma when the implied covariance loses definiteness.
inline void natgrad_step(LatentState& st, const LatentGrad& g, double gamma) {
    const auto M = st.m();
    const Eigen::MatrixXd& C = st.post.q_sqrt;
    const Eigen::VectorXd& m = st.post.q_mean;

    Eigen::MatrixXd S = C * C.transpose();
    Eigen::LLT<Eigen::MatrixXd> lltS(S);
    Eigen::MatrixXd Sinv = lltS.solve(Eigen::MatrixXd::Identity(M, M));

    // dELBO/dS = ell_dS - 0.5 (I - S^-1); dELBO/dm = d_qmean
    Eigen::MatrixXd dS = g.ell_dS - 0.5 * (Eigen::MatrixXd::Identity(M, M) - Sinv);
    const Eigen::VectorXd& dm = g.d_qmean;

    Eigen::VectorXd dEta1 = dm - 2.0 * (dS * m);
    Eigen::VectorXd theta1 = Sinv * m;

    for (int tries = 0; tries < 20; ++tries, gamma *= 0.5) {
        Eigen::VectorXd t1 = theta1 + gamma * dEta1;
        Eigen::MatrixXd prec = Sinv - 2.0 * gamma * dS; // -2 * theta2_new
        prec = 0.5 * (prec + prec.transpose().eval());
        Eigen::LLT<Eigen::MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd Snew = llt.solve(Eigen::MatrixXd::Identity(M, M));
        Snew = 0.5 * (Snew + Snew.transpose().eval());
        Eigen::LLT<Eigen::MatrixXd> lltSnew(Snew);
        if (lltSnew.info() != Eigen::Success) continue;
        Eigen::MatrixXd Cnew = lltSnew.matrixL();
        if (!(Cnew.diagonal().array() > 0.0).all()) continue;
        st.post.q_mean = Snew * t1;
        st.post.q_sqrt = std::move(Cnew);
        return;
    }
    // step skipped; Adam keeps making progress on the other parameters
}

} // namespace detail

// Maximizes the ELBO: natural-gradient steps on the variational parameters
// interleaved with Adam on kernel hyperparameters and inducing locations
// (Adam on everything when natgrad is disabled). Full-batch gradients.
inline HetGPModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const LatentGPConfig& cfg_mean, const LatentGPConfig& cfg_logstd,
                      const TrainConfig& tc) {
    tc.validate();
    auto t0 = std::chrono::steady_clock::now();
    HetGPModel model = init_model(X, y, cfg_mean, cfg_logstd);

    const bool q_in_adam = !tc.natgrad_enabled;
    ParamLayout l1 = ParamLayout::of(model.latent_mean, q_in_adam, tc.optimize_hyperparameters);
    ParamLayout l2 = ParamLayout::of(model.latent_logstd, q_in_adam, tc.optimize_hyperparameters);
    const Eigen::Index n1 = l1.size(), n2 = l2.size(), n = n1 + n2;

    Eigen::VectorXd theta(n);
    pack_latent(model.latent_mean, l1, theta.data());
    pack_latent(model.latent_logstd, l2, theta.data() + n1);
    detail::Adam adam(n, tc.adam_lr);

    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(tc.max_epochs));
    const int w = tc.convergence_window;

    int epoch = 0;
    for (; epoch < tc.max_epochs; ++epoch) {
        ElboGradients eg = elbo_with_grad(model, X, y);
        history.push_back(eg.value);

        if (tc.natgrad_enabled) {
            detail::natgrad_step(model.latent_mean, eg.grad_mean, tc.natgrad_gamma);
            detail::natgrad_step(model.latent_logstd, eg.grad_logstd, tc.natgrad_gamma);
        }
        if (n > 0) {
            Eigen::VectorXd grad(n);
            grad_to_raw(model.latent_mean, l1, eg.grad_mean, grad.data());
            grad_to_raw(model.latent_logstd, l2, eg.grad_logstd, grad.data() + n1);
            adam.step(theta, grad);
            unpack_latent(model.latent_mean, l1, theta.data());
            unpack_latent(model.latent_logstd, l2, theta.data() + n1);
        }

        if (static_cast<int>(history.size()) >= 2 * w) {
            auto end = history.end();
            double recent = *std::max_element(end - w, end);
            double prev = *std::max_element(end - 2 * w, end - w);
            if ((recent - prev) / std::max(1.0, std::abs(prev)) < tc.convergence_tol) {
                ++epoch;
                break;
            }
        }
    }

    model.train_stats.initial_elbo = history.front();
    model.train_stats.final_elbo = elbo(model, X, y);
    model.train_stats.epochs = epoch;
    model.train_stats.warning_non_improving =
        model.train_stats.final_elbo < model.train_stats.initial_elbo;
    model.train_stats.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return model;
}

// Convenience: default latent configurations for a standardized-input dataset.
inline std::pair<LatentGPConfig, LatentGPConfig> default_latent_cfgs(
    const Eigen::VectorXd& y, KernelFamily family = KernelFamily::RationalQuadratic,
    double inducing_ratio = 0.05) {
    LatentGPConfig mean_cfg, logstd_cfg;
    mean_cfg.kernel.family = family;
    mean_cfg.prior_mean = y.mean();
    mean_cfg.inducing_ratio = inducing_ratio;
    logstd_cfg.kernel.family = family;
    logstd_cfg.prior_mean = 0.0;
    logstd_cfg.inducing_ratio = inducing_ratio;
    return {mean_cfg, logstd_cfg};
}

} // namespace ns
