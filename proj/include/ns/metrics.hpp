#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "ns/dataset.hpp"
#include "ns/errors.hpp"

namespace ns {

struct LabeledScores {
    Eigen::VectorXd scores;
    Eigen::VectorXi labels; // 1 = anomaly

    void validate() const {
        if (scores.size() != labels.size()) throw MetricError("scores/labels length mismatch");
        if (labels.sum() == 0 || labels.sum() == labels.size())
            throw MetricError("metric undefined: single-class input");
    }
};

namespace detail {

// midranks (1-based), ties share the average rank
inline Eigen::VectorXd midranks(const Eigen::VectorXd& v) {
    const auto n = v.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    Eigen::VectorXd r(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && v[order[static_cast<std::size_t>(j + 1)]] == v[order[static_cast<std::size_t>(i)]]) ++j;
        double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index t = i; t <= j; ++t) r[order[static_cast<std::size_t>(t)]] = mid;
        i = j + 1;
    }
    return r;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace detail

// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie), via midranks.
inline double roc_auc(const LabeledScores& ls) {
    ls.validate();
    Eigen::VectorXd r = detail::midranks(ls.scores);
    double npos = ls.labels.sum(), nneg = static_cast<double>(ls.labels.size()) - npos;
    double rank_sum = 0.0;
    for (Eigen::Index i = 0; i < ls.labels.size(); ++i)
        if (ls.labels[i] == 1) rank_sum += r[i];
    return (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

// Step interpolation of the precision-recall curve at distinct score thresholds.
inline double pr_auc(const LabeledScores& ls) {
    ls.validate();
    const auto n = ls.scores.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return ls.scores[a] > ls.scores[b]; });
    const double total_pos = ls.labels.sum();
    double tp = 0.0, seen = 0.0, auc = 0.0, prev_recall = 0.0;
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n &&
               ls.scores[order[static_cast<std::size_t>(j + 1)]] ==
                   ls.scores[order[static_cast<std::size_t>(i)]])
            ++j;
        for (Eigen::Index t = i; t <= j; ++t) {
            seen += 1.0;
            tp += ls.labels[order[static_cast<std::size_t>(t)]];
        }
        double recall = tp / total_pos;
        double precision = tp / seen;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return auc;
}

// Precision among the top-n scores; ties broken by stable original order.
inline double precision_at_n(const LabeledScores& ls, long n) {
    ls.validate();
    if (n < 1 || n > ls.scores.size()) throw MetricError("precision_at_n: bad n");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(ls.scores.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return ls.scores[a] > ls.scores[b]; });
    long hits = 0;
    for (long i = 0; i < n; ++i) hits += ls.labels[order[static_cast<std::size_t>(i)]];
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct WeightedTau {
    double tau = 0.0;
    bool all_tied = false; // diagnostic: every pair tied in u or v
};

// Pairwise concordance with additive hyperbolic rank weights
// w_ij = 1/(r_i+1) + 1/(r_j+1), ranks taken from descending order of u.
inline WeightedTau weighted_kendall_tau(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const auto n = u.size();
    if (n < 2 || v.size() != n) throw MetricError("weighted_kendall_tau needs equal lengths >= 2");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return u[a] > u[b]; });
    Eigen::VectorXd rank(n);
    for (Eigen::Index i = 0; i < n; ++i) rank[order[static_cast<std::size_t>(i)]] = static_cast<double>(i);

    double num = 0.0, den = 0.0;
    bool any_untied = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double w = 1.0 / (rank[i] + 1.0) + 1.0 / (rank[j] + 1.0);
            double du = u[i] - u[j], dv = v[i] - v[j];
            double s = (du > 0 ? 1.0 : du < 0 ? -1.0 : 0.0) * (dv > 0 ? 1.0 : dv < 0 ? -1.0 : 0.0);
            if (du != 0.0 && dv != 0.0) any_untied = true;
            num += w * s;
            den += w;
        }
    }
    return {num / den, !any_untied};
}

struct DelongResult {
    double auc_a = 0.0, auc_b = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    bool degenerate_variance = false;
};

// Paired two-sided DeLong test for the difference of two correlated AUCs.
inline DelongResult delong_test(const Eigen::VectorXd& scores_a, const Eigen::VectorXd& scores_b,
                                const Eigen::VectorXi& labels) {
    const auto n = labels.size();
    if (scores_a.size() != n || scores_b.size() != n) throw MetricError("delong: length mismatch");
    LabeledScores{scores_a, labels}.validate();

    std::vector<Eigen::Index> pos, neg;
    for (Eigen::Index i = 0; i < n; ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    const auto np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());

    // placement values per score vector
    auto placements = [&](const Eigen::VectorXd& s, Eigen::VectorXd& v10, Eigen::VectorXd& v01) {
        v10.resize(static_cast<Eigen::Index>(pos.size()));
        v01.resize(static_cast<Eigen::Index>(neg.size()));
        for (std::size_t i = 0; i < pos.size(); ++i) {
            double acc = 0.0;
            for (auto j : neg) acc += s[pos[i]] > s[j] ? 1.0 : (s[pos[i]] == s[j] ? 0.5 : 0.0);
            v10[static_cast<Eigen::Index>(i)] = acc / nn;
        }
        for (std::size_t j = 0; j < neg.size(); ++j) {
            double acc = 0.0;
            for (auto i : pos) acc += s[i] > s[neg[j]] ? 1.0 : (s[i] == s[neg[j]] ? 0.5 : 0.0);
            v01[static_cast<Eigen::Index>(j)] = acc / np;
        }
    };
    Eigen::VectorXd v10a, v01a, v10b, v01b;
    placements(scores_a, v10a, v01a);
    placements(scores_b, v10b, v01b);

    DelongResult r;
    r.auc_a = v10a.mean();
    r.auc_b = v10b.mean();

    auto cov = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
        double mx = x.mean(), my = y.mean();
        return ((x.array() - mx) * (y.array() - my)).sum() / (static_cast<double>(x.size()) - 1.0);
    };
    double var = (cov(v10a, v10a) + cov(v10b, v10b) - 2.0 * cov(v10a, v10b)) / np +
                 (cov(v01a, v01a) + cov(v01b, v01b) - 2.0 * cov(v01a, v01b)) / nn;
    double diff = r.auc_a - r.auc_b;
    if (var <= 1e-300) {
        r.degenerate_variance = true;
        r.p_value = diff == 0.0 ? 1.0 : 0.0;
        r.z = diff == 0.0 ? 0.0 : (diff > 0 ? INFINITY : -INFINITY);
        return r;
    }
    r.z = diff / std::sqrt(var);
    r.p_value = 2.0 * (1.0 - detail::normal_cdf(std::abs(r.z)));
    return r;
}

// --- cross-validated evaluation harness --------------------------------------

struct EvalReport {
    std::vector<double> roc_auc_per_seed, pr_auc_per_seed, p_at_n_per_seed;
    double roc_auc_mean = 0.0, roc_auc_std = 0.0;
    double pr_auc_mean = 0.0, pr_auc_std = 0.0;
    double p_at_n_mean = 0.0, p_at_n_std = 0.0;
    long n_used = 0;
    int k_folds = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / (static_cast<double>(v.size()) - 1.0))};
}

} // namespace detail

// scorer(train, test, seed) -> anomaly score per test row, higher = more anomalous
using Scorer =
    std::function<Eigen::VectorXd(const Dataset&, const Dataset&, std::uint64_t)>;

// Per seed: re-inject anomalies, split into k folds by seeded shuffle, train on
// k-1 folds, score the held-out fold, pool scores, compute the three metrics.
// Aggregates mean +- std over seeds. Training rows are kept in shuffle order so
// "first rows" inducing initialization sees a random subset.
inline EvalReport cross_validated_eval(const Scorer& scorer, const Dataset& clean,
                                       const InjectionConfig& inject_cfg, int k_folds,
                                       const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("cross_validated_eval needs at least one seed");
    EvalReport rep;
    rep.k_folds = k_folds;
    for (std::uint64_t seed : seeds) {
        InjectionConfig ic = inject_cfg;
        ic.seed = seed;
        Dataset injected = inject_anomalies(clean, ic);
        const auto N = injected.n();
        auto order = shuffled_indices(N, seed);
        auto fold = kfold_split(N, k_folds, seed);

        Eigen::VectorXd pooled(N);
        for (int f = 0; f < k_folds; ++f) {
            std::vector<Eigen::Index> train_rows, test_rows;
            for (auto idx : order)
                (fold[static_cast<std::size_t>(idx)] == f ? test_rows : train_rows).push_back(idx);
            Dataset train = subset(injected, train_rows);
            Dataset test = subset(injected, test_rows);
            Eigen::VectorXd s = scorer(train, test, seed * 1000 + static_cast<std::uint64_t>(f));
            for (std::size_t t = 0; t < test_rows.size(); ++t)
                pooled[test_rows[t]] = s[static_cast<Eigen::Index>(t)];
        }

        LabeledScores ls{pooled, *injected.labels};
        long n_anom = injected.labels->sum();
        rep.roc_auc_per_seed.push_back(roc_auc(ls));
        rep.pr_auc_per_seed.push_back(pr_auc(ls));
        rep.p_at_n_per_seed.push_back(precision_at_n(ls, n_anom));
        rep.n_used = n_anom;
    }
    std::tie(rep.roc_auc_mean, rep.roc_auc_std) = detail::mean_std(rep.roc_auc_per_seed);
    std::tie(rep.pr_auc_mean, rep.pr_auc_std) = detail::mean_std(rep.pr_auc_per_seed);
    std::tie(rep.p_at_n_mean, rep.p_at_n_std) = detail::mean_std(rep.p_at_n_per_seed);
    return rep;
}

} // namespace ns
