#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ns/errors.hpp"
#include "ns/rng.hpp"

namespace ns {

// The universal input record: contextual matrix X (standardized), behavioral
// vector y, optional anomaly labels, plus the constants needed to undo scaling.
struct Dataset {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::optional<Eigen::VectorXi> labels;

    std::vector<std::string> column_names; // X columns, post one-hot encoding
    std::string behavioral_name;

    Eigen::VectorXd x_mean, x_std; // standardization constants per X column
    double y_min = 0.0, y_max = 1.0;
    bool y_scaled = false;

    // synthetic ground truth, present only for generated data
    std::optional<Eigen::VectorXd> true_mean, true_std;

    std::string source;
    std::vector<std::uint64_t> seed_trail;
    long dropped_rows = 0;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }

    Eigen::MatrixXd raw_X() const {
        return (X * x_std.asDiagonal()).rowwise() + x_mean.transpose();
    }
    Eigen::VectorXd raw_y() const {
        return y_scaled ? Eigen::VectorXd(y * (y_max - y_min) + Eigen::VectorXd::Constant(y.size(), y_min))
                        : y;
    }
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

inline bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "nan" || s == "NaN" || s == "?";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void standardize_columns(Dataset& ds) {
    const auto n = static_cast<double>(ds.X.rows());
    ds.x_mean = ds.X.colwise().mean();
    ds.X.rowwise() -= ds.x_mean.transpose();
    ds.x_std = (ds.X.colwise().squaredNorm() / n).cwiseSqrt();
    for (Eigen::Index j = 0; j < ds.x_std.size(); ++j)
        if (ds.x_std[j] < 1e-12) ds.x_std[j] = 1.0; // constant column, leave centered
    ds.X = ds.X * ds.x_std.cwiseInverse().asDiagonal();
}

} // namespace detail

struct LoadOptions {
    bool standardize = true;
    int max_onehot_levels = 16;
    std::string labels_column; // optional
};

// Reads a headered CSV. Contextual columns: explicit list, or (when empty) every
// numeric column other than the behavioral one. Explicit non-numeric columns with
// few distinct levels are one-hot encoded; rows with missing cells are dropped.
inline Dataset load_csv(const std::string& path, const std::string& behavioral_column,
                        std::vector<std::string> contextual_columns = {},
                        const LoadOptions& opt = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
    std::vector<std::string> header = detail::split_csv_line(line);
    std::map<std::string, int> col_index;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) col_index[header[i]] = i;

    auto require = [&](const std::string& name) {
        auto it = col_index.find(name);
        if (it == col_index.end()) throw DataError("missing column: " + name);
        return it->second;
    };
    int y_idx = require(behavioral_column);
    int label_idx = opt.labels_column.empty() ? -1 : require(opt.labels_column);

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        cells.resize(header.size());
        rows.push_back(std::move(cells));
    }

    bool auto_context = contextual_columns.empty();
    if (auto_context) {
        for (int i = 0; i < static_cast<int>(header.size()); ++i) {
            if (i == y_idx || i == label_idx) continue;
            bool numeric = true;
            double tmp;
            for (const auto& r : rows) {
                if (detail::is_missing(r[i])) continue;
                if (!detail::parse_double(r[i], tmp)) { numeric = false; break; }
            }
            if (numeric) contextual_columns.push_back(header[i]);
        }
        if (contextual_columns.empty()) throw DataError("no numeric contextual columns found");
    }

    // classify each requested contextual column as numeric or categorical
    struct ColPlan {
        int idx;
        bool categorical = false;
        std::vector<std::string> levels;
    };
    std::vector<ColPlan> plan;
    for (const auto& name : contextual_columns) {
        ColPlan cp{require(name)};
        double tmp;
        std::set<std::string> levels;
        for (const auto& r : rows) {
            if (detail::is_missing(r[cp.idx])) continue;
            if (!detail::parse_double(r[cp.idx], tmp)) {
                cp.categorical = true;
                levels.insert(r[cp.idx]);
            }
        }
        if (cp.categorical) {
            for (const auto& r : rows)
                if (!detail::is_missing(r[cp.idx])) levels.insert(r[cp.idx]);
            if (static_cast<int>(levels.size()) > opt.max_onehot_levels)
                throw DataError("column not numeric: " + name);
            cp.levels.assign(levels.begin(), levels.end());
        }
        plan.push_back(std::move(cp));
    }

    Dataset ds;
    ds.source = path;
    ds.behavioral_name = behavioral_column;
    for (std::size_t c = 0; c < plan.size(); ++c) {
        if (plan[c].categorical)
            for (const auto& lv : plan[c].levels)
                ds.column_names.push_back(contextual_columns[c] + "=" + lv);
        else
            ds.column_names.push_back(contextual_columns[c]);
    }

    std::vector<Eigen::VectorXd> xrows;
    std::vector<double> yvals;
    std::vector<int> lvals;
    const auto P = static_cast<Eigen::Index>(ds.column_names.size());
    for (const auto& r : rows) {
        Eigen::VectorXd xr(P);
        Eigen::Index j = 0;
        bool ok = true;
        for (const auto& cp : plan) {
            const std::string& cell = r[cp.idx];
            if (detail::is_missing(cell)) { ok = false; break; }
            if (cp.categorical) {
                for (const auto& lv : cp.levels) xr[j++] = (cell == lv) ? 1.0 : 0.0;
            } else {
                double v;
                if (!detail::parse_double(cell, v)) { ok = false; break; }
                xr[j++] = v;
            }
        }
        double yv = 0.0;
        ok = ok && !detail::is_missing(r[y_idx]) && detail::parse_double(r[y_idx], yv);
        int lb = 0;
        if (ok && label_idx >= 0) {
            double lv;
            ok = detail::parse_double(r[label_idx], lv);
            lb = lv != 0.0 ? 1 : 0;
        }
        if (!ok) { ++ds.dropped_rows; continue; }
        xrows.push_back(std::move(xr));
        yvals.push_back(yv);
        if (label_idx >= 0) lvals.push_back(lb);
    }
    if (xrows.empty()) throw DataError("empty dataset after dropping bad rows: " + path);

    ds.X.resize(static_cast<Eigen::Index>(xrows.size()), P);
    ds.y.resize(static_cast<Eigen::Index>(yvals.size()));
    for (Eigen::Index i = 0; i < ds.X.rows(); ++i) {
        ds.X.row(i) = xrows[static_cast<std::size_t>(i)];
        ds.y[i] = yvals[static_cast<std::size_t>(i)];
    }
    if (label_idx >= 0) {
        Eigen::VectorXi lab(static_cast<Eigen::Index>(lvals.size()));
        for (Eigen::Index i = 0; i < lab.size(); ++i) lab[i] = lvals[static_cast<std::size_t>(i)];
        ds.labels = lab;
    }

    if (opt.standardize) {
        detail::standardize_columns(ds);
    } else {
        ds.x_mean = Eigen::VectorXd::Zero(P);
        ds.x_std = Eigen::VectorXd::Ones(P);
    }
    return ds;
}

// Writes the dataset as stored (X in its current scaling) with full precision.
inline void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& c : ds.column_names) out << c << ",";
    out << ds.behavioral_name;
    if (ds.labels) out << ",label";
    if (ds.true_mean) out << ",true_mean,true_std";
    out << "\n";
    char buf[64];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        for (Eigen::Index j = 0; j < ds.p(); ++j) { emit(ds.X(i, j)); out << ","; }
        emit(ds.y[i]);
        if (ds.labels) out << "," << (*ds.labels)[i];
        if (ds.true_mean) {
            out << ",";
            emit((*ds.true_mean)[i]);
            out << ",";
            emit((*ds.true_std)[i]);
        }
        out << "\n";
    }
}

// MinMax-scales y to [0,1]; contextual features untouched.
inline Dataset minmax_scale_y(Dataset ds) {
    double lo = ds.y.minCoeff(), hi = ds.y.maxCoeff();
    if (!(hi > lo)) throw DegenerateInputError("minmax_scale_y: constant behavioral vector");
    ds.y_min = lo;
    ds.y_max = hi;
    ds.y = (ds.y.array() - lo) / (hi - lo);
    ds.y_scaled = true;
    return ds;
}

struct InjectionConfig {
    long count = 0;          // explicit n; 0 means use ratio
    double ratio = 0.0;
    double epsilon_low = 0.1;
    double epsilon_high = 0.5;
    std::uint64_t seed = 0;
};

// Perturbs n distinct rows of y by +-U[eps_low, eps_high] with a fair sign;
// X untouched, no clipping, labels mark the perturbed rows.
inline Dataset inject_anomalies(Dataset ds, const InjectionConfig& cfg) {
    if (!ds.y_scaled) throw ConfigError("inject_anomalies expects min-max scaled y");
    if (!(cfg.epsilon_low > 0.0 && cfg.epsilon_low < cfg.epsilon_high))
        throw ConfigError("invalid epsilon range");
    const auto N = ds.n();
    long n = cfg.count > 0 ? cfg.count : std::lround(cfg.ratio * static_cast<double>(N));
    if (n < 1) throw ConfigError("injection count must be at least 1");
    if (n >= N) throw ConfigError("injection count must be below dataset size");

    Rng rng = Rng::derive(cfg.seed, 0x696e6a65ULL);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(N));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());

    Eigen::VectorXi labels = Eigen::VectorXi::Zero(N);
    for (Eigen::Index i : idx) {
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        double eps = sign * rng.uniform(cfg.epsilon_low, cfg.epsilon_high);
        ds.y[i] += eps;
        labels[i] = 1;
    }
    ds.labels = labels;
    ds.seed_trail.push_back(cfg.seed);
    return ds;
}

// Piecewise-linear curve over ascending knots, clamped at the ends.
struct Curve {
    std::vector<double> knots_x, knots_y;

    double operator()(double x) const {
        if (x <= knots_x.front()) return knots_y.front();
        if (x >= knots_x.back()) return knots_y.back();
        auto it = std::upper_bound(knots_x.begin(), knots_x.end(), x);
        std::size_t j = static_cast<std::size_t>(it - knots_x.begin());
        double t = (x - knots_x[j - 1]) / (knots_x[j] - knots_x[j - 1]);
        return knots_y[j - 1] * (1.0 - t) + knots_y[j] * t;
    }

    void validate(bool positive) const {
        if (knots_x.size() < 2 || knots_x.size() != knots_y.size())
            throw ConfigError("curve needs at least 2 knots with matching values");
        for (std::size_t i = 1; i < knots_x.size(); ++i)
            if (!(knots_x[i] > knots_x[i - 1]))
                throw ConfigError("curve knots must be strictly ascending");
        if (positive)
            for (double v : knots_y)
                if (!(v > 0.0)) throw ConfigError("std curve must be positive at all knots");
    }
};

struct SynthConfig {
    enum class Dist { Uniform, Exponential };
    Dist context_dist = Dist::Exponential;
    double dist_a = 0.4, dist_b = 0.0; // Exponential: rate = a; Uniform: [a, b]
    Curve mean_curve, std_curve;
    long n = 1000;
    std::uint64_t seed = 0;
};

// 1-D contextual generator: context from the chosen distribution (exponential
// draws rejected outside the knot range), y ~ N(mean_curve(a), std_curve(a)^2).
// Ground-truth latents are recorded per row.
inline Dataset synth_generate(const SynthConfig& cfg) {
    cfg.mean_curve.validate(false);
    cfg.std_curve.validate(true);
    if (cfg.n < 2) throw ConfigError("synth_generate needs n >= 2");

    Rng rng = Rng::derive(cfg.seed, 0x73796e74ULL);
    double lo = cfg.mean_curve.knots_x.front(), hi = cfg.mean_curve.knots_x.back();

    Dataset ds;
    ds.X.resize(cfg.n, 1);
    ds.y.resize(cfg.n);
    Eigen::VectorXd tm(cfg.n), tsd(cfg.n);
    long attempts = 0;
    for (long i = 0; i < cfg.n; ++i) {
        double a;
        if (cfg.context_dist == SynthConfig::Dist::Uniform) {
            a = rng.uniform(cfg.dist_a, cfg.dist_b);
            ++attempts;
        } else {
            do {
                a = rng.exponential(cfg.dist_a);
                ++attempts;
                if (attempts > 100 * (i + 1) + 10000)
                    throw ConfigError("synth_generate: rejection acceptance below 1%");
            } while (a < lo || a > hi);
        }
        double m = cfg.mean_curve(a), s = cfg.std_curve(a);
        ds.X(i, 0) = a;
        ds.y[i] = rng.normal(m, s);
        tm[i] = m;
        tsd[i] = s;
    }
    ds.true_mean = tm;
    ds.true_std = tsd;
    ds.column_names = {"context"};
    ds.behavioral_name = "y";
    ds.source = "synthetic";
    ds.seed_trail.push_back(cfg.seed);
    detail::standardize_columns(ds);
    return ds;
}

// Seeded shuffle of 0..N-1. Defines both the fold layout and the "first rows"
// ordering that inducing-point initialization relies on.
inline std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng::derive(seed, 0x666f6c64ULL);
    rng.shuffle(idx);
    return idx;
}

// Fold assignment per row; contiguous blocks of the seeded shuffle, sizes
// differing by at most one.
inline std::vector<int> kfold_split(Eigen::Index n, int k, std::uint64_t seed) {
    if (k < 1 || static_cast<Eigen::Index>(k) > n) throw ConfigError("kfold_split: bad k");
    auto idx = shuffled_indices(n, seed);
    std::vector<int> fold(static_cast<std::size_t>(n));
    Eigen::Index base = n / k, extra = n % k, pos = 0;
    for (int f = 0; f < k; ++f) {
        Eigen::Index len = base + (f < extra ? 1 : 0);
        for (Eigen::Index t = 0; t < len; ++t) fold[static_cast<std::size_t>(idx[static_cast<std::size_t>(pos++)])] = f;
    }
    return fold;
}

// Row subset, preserving scaling constants and ground truth.
inline Dataset subset(const Dataset& ds, const std::vector<Eigen::Index>& rows) {
    Dataset out = ds;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.X.resize(m, ds.p());
    out.y.resize(m);
    if (ds.labels) out.labels = Eigen::VectorXi(m);
    if (ds.true_mean) { out.true_mean = Eigen::VectorXd(m); out.true_std = Eigen::VectorXd(m); }
    for (Eigen::Index i = 0; i < m; ++i) {
        out.X.row(i) = ds.X.row(rows[static_cast<std::size_t>(i)]);
        out.y[i] = ds.y[rows[static_cast<std::size_t>(i)]];
        if (ds.labels) (*out.labels)[i] = (*ds.labels)[rows[static_cast<std::size_t>(i)]];
        if (ds.true_mean) {
            (*out.true_mean)[i] = (*ds.true_mean)[rows[static_cast<std::size_t>(i)]];
            (*out.true_std)[i] = (*ds.true_std)[rows[static_cast<std::size_t>(i)]];
        }
    }
    return out;
}

} // namespace ns
