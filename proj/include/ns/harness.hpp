#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "ns/baselines.hpp"
#include "ns/dataset.hpp"
#include "ns/metrics.hpp"
#include "ns/normalcy.hpp"
#include "ns/train.hpp"

namespace ns {

// --- scorers for the benchmark protocol --------------------------------------

inline Eigen::MatrixXd joint_xy(const Dataset& ds) {
    Eigen::MatrixXd J(ds.n(), ds.p() + 1);
    J.leftCols(ds.p()) = ds.X;
    J.col(ds.p()) = ds.y;
    return J;
}

// |E[NS]| per test row; the point score is enough for ranking metrics.
inline Scorer make_ns_scorer(KernelFamily family = KernelFamily::RationalQuadratic,
                             double inducing_ratio = 0.05, TrainConfig tc = {}) {
    return [=](const Dataset& train, const Dataset& test, std::uint64_t seed) {
        TrainConfig t = tc;
        t.seed = seed;
        auto [c1, c2] = default_latent_cfgs(train.y, family, inducing_ratio);
        HetGPModel model = fit(train.X, train.y, c1, c2, t);
        auto preds = predict_latents(model, test.X);
        Eigen::VectorXd out(test.n());
        for (Eigen::Index i = 0; i < test.n(); ++i)
            out[i] = std::abs(ns_point(preds[static_cast<std::size_t>(i)], test.y[i]));
        return out;
    };
}

inline Scorer make_zscore_scorer() {
    return [](const Dataset& train, const Dataset& test, std::uint64_t) {
        ZScoreModel m = zscore_fit(train.X, train.y);
        return Eigen::VectorXd(zscore_score(m, test.X, test.y).cwiseAbs());
    };
}

// Non-contextual detectors fit on the joint (X, y) for the benchmark.
inline Scorer make_iforest_scorer() {
    return [](const Dataset& train, const Dataset& test, std::uint64_t seed) {
        auto m = iforest_fit(joint_xy(train), 100, 256, seed);
        return iforest_score(m, joint_xy(test));
    };
}

inline Scorer make_lof_scorer() {
    return [](const Dataset& train, const Dataset& test, std::uint64_t) {
        auto m = lof_fit(joint_xy(train), std::min<int>(20, static_cast<int>(train.n()) - 1));
        return lof_score(m, joint_xy(test));
    };
}

inline Scorer make_hbos_scorer() {
    return [](const Dataset& train, const Dataset& test, std::uint64_t) {
        auto m = hbos_fit(joint_xy(train));
        return hbos_score(m, joint_xy(test));
    };
}

inline Scorer make_scorer(const std::string& method, KernelFamily family = KernelFamily::RationalQuadratic,
                          double inducing_ratio = 0.05, TrainConfig tc = {}) {
    if (method == "ns") return make_ns_scorer(family, inducing_ratio, tc);
    if (method == "zscore") return make_zscore_scorer();
    if (method == "iforest") return make_iforest_scorer();
    if (method == "lof") return make_lof_scorer();
    if (method == "hbos") return make_hbos_scorer();
    throw ConfigError("unknown method: " + method);
}

// --- Z-score vs NS triage ----------------------------------------------------

enum class TriageClass { BothAnomalous, BothNormal, Disagree, Unreliable };

inline std::string to_string(TriageClass c) {
    switch (c) {
        case TriageClass::BothAnomalous: return "both-anomalous";
        case TriageClass::BothNormal: return "both-normal";
        case TriageClass::Disagree: return "disagree";
        case TriageClass::Unreliable: return "unreliable";
    }
    return "?";
}

inline TriageClass triage_classify(double z, double hdi_low, double hdi_high, double threshold) {
    if (hdi_low <= threshold && threshold <= hdi_high) return TriageClass::Unreliable;
    if (z > threshold && hdi_low > threshold) return TriageClass::BothAnomalous;
    if (z < threshold && hdi_high < threshold) return TriageClass::BothNormal;
    return TriageClass::Disagree;
}

// --- score table export ------------------------------------------------------

struct ScoreRow {
    long row_id = 0;
    double y = 0.0;
    double score = 0.0, abs_score = 0.0;
    bool has_interval = false;
    double hdi_low = 0.0, hdi_high = 0.0, width = 0.0;
    std::string verdict; // empty for baselines
};

inline void write_scores_csv(const std::vector<ScoreRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "row_id,y,score,abs_score,hdi_low,hdi_high,width,verdict\n";
    char buf[64];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const auto& r : rows) {
        out << r.row_id << ",";
        emit(r.y); out << ",";
        emit(r.score); out << ",";
        emit(r.abs_score); out << ",";
        if (r.has_interval) {
            emit(r.hdi_low); out << ",";
            emit(r.hdi_high); out << ",";
            emit(r.width); out << ",";
        } else {
            out << ",,,";
        }
        out << r.verdict << "\n";
    }
}

// --- RQ2: does HDI width track contextual sparsity? --------------------------

struct Rq2Report {
    WeightedTau tau;
    Eigen::VectorXd widths;          // i(x,y) per row
    Eigen::VectorXd context_scores;  // detector score on X only
    std::vector<bool> context_anomalous; // top decile of the detector score
    double median_width_anomalous = 0.0, median_width_inlier = 0.0;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

// Fits the chosen detector on contextual variables only and correlates its
// scores with HDI widths from an already-fitted NS model.
inline Rq2Report rq2_correlate(const HetGPModel& model, const Dataset& ds,
                               const std::string& detector, const NSConfig& ns_cfg,
                               std::uint64_t seed) {
    Eigen::VectorXd ctx;
    if (detector == "iforest") {
        auto m = iforest_fit(ds.X, 100, 256, seed);
        ctx = iforest_score(m, ds.X);
    } else if (detector == "lof") {
        auto m = lof_fit(ds.X, std::min<int>(20, static_cast<int>(ds.n()) - 1));
        ctx = lof_score(m, ds.X);
    } else if (detector == "hbos") {
        auto m = hbos_fit(ds.X);
        ctx = hbos_score(m, ds.X);
    } else {
        throw ConfigError("unknown detector: " + detector);
    }

    auto preds = predict_latents(model, ds.X);
    Eigen::VectorXd widths(ds.n());
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        NSResult r = assess_prediction(preds[static_cast<std::size_t>(i)], ds.y[i], ns_cfg,
                                       static_cast<std::uint64_t>(i));
        widths[i] = r.width;
    }

    Rq2Report rep;
    rep.tau = weighted_kendall_tau(widths, ctx);
    rep.widths = widths;
    rep.context_scores = ctx;

    // contextual-anomalous = top decile of the detector score
    std::vector<double> sorted(ctx.data(), ctx.data() + ctx.size());
    std::sort(sorted.begin(), sorted.end());
    double cut = sorted[static_cast<std::size_t>(0.9 * static_cast<double>(sorted.size()))];
    std::vector<double> wa, wi;
    rep.context_anomalous.resize(static_cast<std::size_t>(ds.n()));
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        bool anom = ctx[i] >= cut;
        rep.context_anomalous[static_cast<std::size_t>(i)] = anom;
        (anom ? wa : wi).push_back(widths[i]);
    }
    rep.median_width_anomalous = median_of(wa);
    rep.median_width_inlier = median_of(wi);
    return rep;
}

} // namespace ns
