#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "ns/errors.hpp"
#include "ns/rng.hpp"

namespace ns {

// --- classic Z-score ---------------------------------------------------------

// Linear regression of behavior on context with a single global residual scale.
struct ZScoreModel {
    Eigen::VectorXd weights; // P + 1, intercept last
    double residual_std = 0.0;
};

inline ZScoreModel zscore_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const auto N = X.rows(), P = X.cols();
    if (N <= P + 1) throw ConfigError("zscore_fit needs N > P + 1");
    Eigen::MatrixXd D(N, P + 1);
    D.leftCols(P) = X;
    D.col(P).setOnes();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
    if (qr.rank() < P + 1) throw DegenerateInputError("zscore_fit: rank-deficient design matrix");
    ZScoreModel m;
    m.weights = qr.solve(y);
    Eigen::VectorXd resid = y - D * m.weights;
    m.residual_std = std::sqrt(resid.squaredNorm() / static_cast<double>(N));
    return m;
}

inline double zscore_score(const ZScoreModel& m, const Eigen::RowVectorXd& x, double y) {
    if (m.residual_std < 1e-12)
        throw DegenerateInputError("zscore_score: zero residual std (exact fit)");
    double f = x.dot(m.weights.head(x.size())) + m.weights[m.weights.size() - 1];
    return (y - f) / m.residual_std;
}

inline Eigen::VectorXd zscore_score(const ZScoreModel& m, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y) {
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = zscore_score(m, X.row(i), y[i]);
    return out;
}

// --- Isolation Forest --------------------------------------------------------

struct IsolationForestModel {
    struct Node {
        int split_dim = -1;       // -1 marks a leaf
        double split_value = 0.0;
        int left = -1, right = -1;
        long size = 0;            // leaf: points that ended here
    };
    struct Tree {
        std::vector<Node> nodes;
    };
    std::vector<Tree> trees;
    long subsample_size = 256;
    int n_trees = 100;
};

namespace detail {

inline double harmonic(long n) {
    double h = 0.0;
    for (long i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
    return h;
}

// average unsuccessful BST search length; c(1) = 0, c(2) = 1
inline double iforest_c(long n) {
    if (n <= 1) return 0.0;
    return 2.0 * harmonic(n - 1) - 2.0 * static_cast<double>(n - 1) / static_cast<double>(n);
}

inline int iforest_grow(IsolationForestModel::Tree& tree, const Eigen::MatrixXd& X,
                        std::vector<Eigen::Index>& rows, std::size_t begin, std::size_t end,
                        int depth, int max_depth, Rng& rng) {
    int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    long size = static_cast<long>(end - begin);
    if (size <= 1 || depth >= max_depth) {
        tree.nodes[id].size = size;
        return id;
    }
    // pick a dimension with spread; give up after a few tries (duplicates)
    for (int attempt = 0; attempt < 8; ++attempt) {
        int dim = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(X.cols())));
        double lo = X(rows[begin], dim), hi = lo;
        for (std::size_t i = begin + 1; i < end; ++i) {
            lo = std::min(lo, X(rows[i], dim));
            hi = std::max(hi, X(rows[i], dim));
        }
        if (!(hi > lo)) continue;
        double split = rng.uniform(lo, hi);
        auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                  rows.begin() + static_cast<std::ptrdiff_t>(end),
                                  [&](Eigen::Index r) { return X(r, dim) < split; });
        auto m = static_cast<std::size_t>(mid - rows.begin());
        if (m == begin || m == end) continue;
        tree.nodes[id].split_dim = dim;
        tree.nodes[id].split_value = split;
        int l = iforest_grow(tree, X, rows, begin, m, depth + 1, max_depth, rng);
        int r = iforest_grow(tree, X, rows, m, end, depth + 1, max_depth, rng);
        tree.nodes[id].left = l;
        tree.nodes[id].right = r;
        return id;
    }
    tree.nodes[id].size = size;
    return id;
}

} // namespace detail

inline IsolationForestModel iforest_fit(const Eigen::MatrixXd& X, int n_trees = 100,
                                        long subsample = 256, std::uint64_t seed = 0) {
    IsolationForestModel m;
    m.n_trees = n_trees;
    m.subsample_size = std::min<long>(subsample, X.rows());
    int max_depth = static_cast<int>(std::ceil(std::log2(std::max<long>(2, m.subsample_size))));
    Rng rng = Rng::derive(seed, 0x69666f72ULL);
    std::vector<Eigen::Index> all(static_cast<std::size_t>(X.rows()));
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < n_trees; ++t) {
        rng.shuffle(all);
        std::vector<Eigen::Index> rows(all.begin(), all.begin() + m.subsample_size);
        IsolationForestModel::Tree tree;
        detail::iforest_grow(tree, X, rows, 0, rows.size(), 0, max_depth, rng);
        m.trees.push_back(std::move(tree));
    }
    return m;
}

inline Eigen::VectorXd iforest_score(const IsolationForestModel& m, const Eigen::MatrixXd& X) {
    const double cn = detail::iforest_c(m.subsample_size);
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double path_sum = 0.0;
        for (const auto& tree : m.trees) {
            int node = 0;
            int depth = 0;
            while (tree.nodes[node].split_dim >= 0) {
                node = X(i, tree.nodes[node].split_dim) < tree.nodes[node].split_value
                           ? tree.nodes[node].left
                           : tree.nodes[node].right;
                ++depth;
            }
            path_sum += depth + detail::iforest_c(tree.nodes[node].size);
        }
        double avg_path = path_sum / static_cast<double>(m.trees.size());
        out[i] = std::pow(2.0, -avg_path / cn);
    }
    return out;
}

// --- Local Outlier Factor ----------------------------------------------------

struct LofModel {
    Eigen::MatrixXd train;
    int k = 20;
};

inline LofModel lof_fit(const Eigen::MatrixXd& X, int k = 20) {
    if (k >= X.rows()) throw ConfigError("lof_fit: k must be below N");
    return {X, k};
}

namespace detail {

struct LofNeighbors {
    std::vector<Eigen::Index> idx;
    std::vector<double> dist;
    double k_distance = 0.0;
};

// k nearest training rows to a query, optionally excluding one exact self-match
inline LofNeighbors lof_knn(const Eigen::MatrixXd& train, int k, const Eigen::RowVectorXd& q,
                            bool drop_one_zero) {
    const double floor = 1e-12;
    std::vector<std::pair<double, Eigen::Index>> ds(static_cast<std::size_t>(train.rows()));
    for (Eigen::Index j = 0; j < train.rows(); ++j)
        ds[static_cast<std::size_t>(j)] = {(train.row(j) - q).norm(), j};
    std::sort(ds.begin(), ds.end());
    std::size_t start = 0;
    if (drop_one_zero && !ds.empty() && ds[0].first == 0.0) start = 1;
    LofNeighbors out;
    for (std::size_t j = start; j < ds.size() && out.idx.size() < static_cast<std::size_t>(k); ++j) {
        out.idx.push_back(ds[j].second);
        out.dist.push_back(std::max(ds[j].first, floor));
    }
    out.k_distance = out.dist.back();
    return out;
}

inline const LofNeighbors& lof_train_neighbors(const Eigen::MatrixXd& train, int k,
                                               Eigen::Index i, std::vector<LofNeighbors>& cache) {
    auto& slot = cache[static_cast<std::size_t>(i)];
    if (slot.idx.empty()) slot = lof_knn(train, k, train.row(i), true);
    return slot;
}

inline double lof_lrd_train(const Eigen::MatrixXd& train, int k, Eigen::Index i,
                            std::vector<LofNeighbors>& ncache, std::vector<double>& lrd_cache) {
    double& slot = lrd_cache[static_cast<std::size_t>(i)];
    if (slot > 0.0) return slot;
    const auto& nb = lof_train_neighbors(train, k, i, ncache);
    double reach_sum = 0.0;
    for (std::size_t j = 0; j < nb.idx.size(); ++j) {
        const auto& nn = lof_train_neighbors(train, k, nb.idx[j], ncache);
        reach_sum += std::max(nb.dist[j], nn.k_distance);
    }
    slot = static_cast<double>(nb.idx.size()) / std::max(reach_sum, 1e-300);
    return slot;
}

} // namespace detail

inline Eigen::VectorXd lof_score(const LofModel& m, const Eigen::MatrixXd& X) {
    if (X.cols() != m.train.cols())
        throw DimensionError(static_cast<int>(m.train.cols()), static_cast<int>(X.cols()));
    std::vector<detail::LofNeighbors> ncache(static_cast<std::size_t>(m.train.rows()));
    std::vector<double> lrd_cache(static_cast<std::size_t>(m.train.rows()), 0.0);
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        auto nb = detail::lof_knn(m.train, m.k, X.row(i), true);
        double reach_sum = 0.0, lrd_n_sum = 0.0;
        for (std::size_t j = 0; j < nb.idx.size(); ++j) {
            const auto& nn = detail::lof_train_neighbors(m.train, m.k, nb.idx[j], ncache);
            reach_sum += std::max(nb.dist[j], nn.k_distance);
            lrd_n_sum += detail::lof_lrd_train(m.train, m.k, nb.idx[j], ncache, lrd_cache);
        }
        double lrd = static_cast<double>(nb.idx.size()) / std::max(reach_sum, 1e-300);
        out[i] = lrd_n_sum / static_cast<double>(nb.idx.size()) / lrd;
    }
    return out;
}

// --- Histogram-Based Outlier Score -------------------------------------------

struct HbosModel {
    Eigen::MatrixXd edges;   // (bins + 1) x P
    Eigen::MatrixXd density; // bins x P, normalized to max 1 per dimension
    long n_train = 0;
    int bins = 10;
};

inline HbosModel hbos_fit(const Eigen::MatrixXd& X, int bins = 10) {
    HbosModel m;
    m.bins = bins;
    m.n_train = X.rows();
    const auto P = X.cols();
    m.edges.resize(bins + 1, P);
    m.density = Eigen::MatrixXd::Zero(bins, P);
    const double floor_density = 1.0 / static_cast<double>(X.rows() + 1);
    for (Eigen::Index d = 0; d < P; ++d) {
        double lo = X.col(d).minCoeff(), hi = X.col(d).maxCoeff();
        if (!(hi > lo)) hi = lo + 1.0; // constant feature: everything in bin 0
        for (int b = 0; b <= bins; ++b)
            m.edges(b, d) = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            auto b = static_cast<int>((X(i, d) - lo) / (hi - lo) * bins);
            b = std::clamp(b, 0, bins - 1);
            m.density(b, d) += 1.0;
        }
        double maxc = m.density.col(d).maxCoeff();
        m.density.col(d) /= maxc;
        for (int b = 0; b < bins; ++b)
            if (m.density(b, d) <= 0.0) m.density(b, d) = floor_density;
    }
    return m;
}

inline Eigen::VectorXd hbos_score(const HbosModel& m, const Eigen::MatrixXd& X) {
    if (X.cols() != m.edges.cols())
        throw DimensionError(static_cast<int>(m.edges.cols()), static_cast<int>(X.cols()));
    const double floor_density = 1.0 / static_cast<double>(m.n_train + 1);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index d = 0; d < X.cols(); ++d) {
            double lo = m.edges(0, d), hi = m.edges(m.bins, d);
            double dens;
            if (X(i, d) < lo || X(i, d) > hi) {
                dens = floor_density; // outside all bins
            } else {
                auto b = static_cast<int>((X(i, d) - lo) / (hi - lo) * m.bins);
                b = std::clamp(b, 0, m.bins - 1);
                dens = m.density(b, d);
            }
            out[i] += -std::log(dens);
        }
    }
    return out;
}

} // namespace ns
