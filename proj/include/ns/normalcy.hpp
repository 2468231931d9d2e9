#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ns/kde.hpp"
#include "ns/rng.hpp"
#include "ns/svgp.hpp"

namespace ns {

enum class HdiMethod { KdeIntegration, SampleShortestInterval };

struct NSConfig {
    double hdi_mass = 0.95;
    long n_samples = 2000;
    double threshold = 2.0; // clinical Z cut-off
    HdiMethod hdi_method = HdiMethod::KdeIntegration;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(hdi_mass > 0.0 && hdi_mass < 1.0)) throw ConfigError("hdi_mass must be in (0,1)");
        if (n_samples < 100) throw ConfigError("n_samples must be at least 100");
    }
};

enum class Verdict { Normal, Anomalous, Unreliable };

inline std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Normal: return "normal";
        case Verdict::Anomalous: return "anomalous";
        case Verdict::Unreliable: return "unreliable";
    }
    return "?";
}

struct NSResult {
    double score = 0.0;     // expected NS, signed
    double abs_score = 0.0;
    double hdi_low = 0.0, hdi_high = 0.0;
    double width = 0.0;     // i(x,y)
    Verdict verdict = Verdict::Normal;
    bool kde_multimodal_fallback = false;
};

// Expected NS: E[(y - f1) e^{-f2}] = (y - m1) e^{-m2 + s2^2/2}.
inline double ns_point(const LatentPrediction& pred, double y) {
    if (!std::isfinite(y)) throw ConfigError("ns_point: non-finite y");
    return (y - pred.m1) * std::exp(-pred.m2 + 0.5 * pred.s2_sq);
}

// Posterior draws of NS: (y - a) e^{-b}, a ~ N(m1, s1^2), b ~ N(m2, s2^2).
inline Eigen::VectorXd ns_samples(const LatentPrediction& pred, double y, long n, Rng rng) {
    Eigen::VectorXd out(n);
    double sd1 = std::sqrt(pred.s1_sq), sd2 = std::sqrt(pred.s2_sq);
    for (long i = 0; i < n; ++i) {
        double a = pred.m1 + sd1 * rng.normal();
        double b = pred.m2 + sd2 * rng.normal();
        out[i] = (y - a) * std::exp(-b);
    }
    return out;
}

inline Eigen::VectorXd ns_samples(const LatentPrediction& pred, double y, long n,
                                  std::uint64_t seed) {
    return ns_samples(pred, y, n, Rng::derive(seed, 0x6e735f73ULL));
}

struct HdiInterval {
    double low = 0.0, high = 0.0;
    bool multimodal_fallback = false;
};

namespace detail {

inline HdiInterval hdi_shortest(std::vector<double> v, double mass) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    auto w = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n)));
    w = std::min(std::max<std::size_t>(w, 1), n);
    std::size_t best = 0;
    double best_len = v[w - 1] - v[0];
    for (std::size_t i = 1; i + w <= n; ++i) {
        double len = v[i + w - 1] - v[i];
        if (len < best_len) { best_len = len; best = i; }
    }
    return {v[best], v[best + w - 1], false};
}

} // namespace detail

// 95% (by default) highest-density interval of a sample set. KdeIntegration
// bisects on the density cut level whose super-level set carries the target
// mass; a multimodal super-level set falls back to the shortest sample window.
inline HdiInterval hdi(const Eigen::VectorXd& samples, double mass, HdiMethod method) {
    if (samples.size() < 100) throw ConfigError("hdi needs at least 100 samples");
    double lo = samples.minCoeff(), hi = samples.maxCoeff();
    if (hi - lo < 1e-12) return {lo, lo, false}; // degenerate posterior

    std::vector<double> v(samples.data(), samples.data() + samples.size());
    if (method == HdiMethod::SampleShortestInterval) return detail::hdi_shortest(std::move(v), mass);

    KdeDensity kde = kde_build(samples, BandwidthRule::Silverman);
    const auto& d = kde.density_values;
    const double step = kde.grid[1] - kde.grid[0];
    const double total = kde.trapezoid_integral();

    auto mass_above = [&](double cut) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d[i] >= cut) s += d[i];
        return s * step / total;
    };

    double c_lo = 0.0, c_hi = d.maxCoeff();
    for (int it = 0; it < 50; ++it) {
        double c = 0.5 * (c_lo + c_hi);
        if (mass_above(c) >= mass) c_lo = c; else c_hi = c;
    }
    double cut = c_lo;

    // bounding interval of the super-level set; count its connected runs
    Eigen::Index first = -1, last = -1;
    int runs = 0;
    bool in_run = false;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] >= cut) {
            if (first < 0) first = i;
            last = i;
            if (!in_run) { ++runs; in_run = true; }
        } else {
            in_run = false;
        }
    }
    if (first < 0) return detail::hdi_shortest(std::move(v), mass);
    if (runs > 1) {
        // tolerate single-bin dropouts from binning noise
        bool material_gap = false;
        for (Eigen::Index i = first; i <= last; ++i) {
            if (d[i] < cut && (i + 1 > last || d[i + 1] < cut)) { material_gap = true; break; }
        }
        if (material_gap) {
            auto out = detail::hdi_shortest(std::move(v), mass);
            out.multimodal_fallback = true;
            return out;
        }
    }
    return {kde.grid[first], kde.grid[last], false};
}

inline NSResult assess_prediction(const LatentPrediction& pred, double y, const NSConfig& cfg,
                                  std::uint64_t row_id = 0) {
    cfg.validate();
    NSResult r;
    r.score = ns_point(pred, y);
    r.abs_score = std::abs(r.score);
    Eigen::VectorXd draws =
        ns_samples(pred, y, cfg.n_samples, Rng::derive(cfg.seed, row_id * 2ULL + 1ULL));
    HdiInterval iv = hdi(draws, cfg.hdi_mass, cfg.hdi_method);
    r.hdi_low = iv.low;
    r.hdi_high = iv.high;
    r.width = iv.high - iv.low;
    r.kde_multimodal_fallback = iv.multimodal_fallback;

    const double t = cfg.threshold;
    bool straddles = (r.hdi_low <= t && t <= r.hdi_high) || (r.hdi_low <= -t && -t <= r.hdi_high);
    if (straddles)
        r.verdict = Verdict::Unreliable;
    else if (r.hdi_low > t || r.hdi_high < -t)
        r.verdict = Verdict::Anomalous;
    else
        r.verdict = Verdict::Normal;
    return r;
}

// Full per-observation assessment: point score, HDI, width, verdict.
// row_id seeds the sampling stream so batch scoring is order independent.
inline NSResult assess(const HetGPModel& model, const Eigen::RowVectorXd& x, double y,
                       const NSConfig& cfg, std::uint64_t row_id = 0) {
    cfg.validate();
    Eigen::MatrixXd q(1, x.size());
    q.row(0) = x;
    LatentPrediction pred = predict_latents(model, q)[0];
    return assess_prediction(pred, y, cfg, row_id);
}

struct GridRow {
    Eigen::RowVectorXd context;
    NSResult result;
};

struct GridSpec {
    // per contextual dimension: [min, max] and resolution
    std::vector<double> lo, hi;
    std::vector<long> res;
};

// Evaluates assess over the Cartesian grid at a fixed behavioral value.
inline std::vector<GridRow> uncertainty_grid(const HetGPModel& model, const GridSpec& spec,
                                             double fixed_y, const NSConfig& cfg) {
    const auto P = spec.lo.size();
    if (P != spec.hi.size() || P != spec.res.size() ||
        static_cast<Eigen::Index>(P) != model.latent_mean.p())
        throw DimensionError(static_cast<int>(model.latent_mean.p()), static_cast<int>(P));
    long cells = 1;
    for (long r : spec.res) {
        if (r < 1) throw ConfigError("grid resolution must be >= 1");
        cells *= r;
        if (cells > 1000000) throw ResourceError("grid exceeds 1e6 cells");
    }

    std::vector<GridRow> out;
    out.reserve(static_cast<std::size_t>(cells));
    std::vector<long> idx(P, 0);
    Eigen::MatrixXd pts(cells, static_cast<Eigen::Index>(P));
    for (long c = 0; c < cells; ++c) {
        for (std::size_t d = 0; d < P; ++d) {
            double frac = spec.res[d] > 1
                              ? static_cast<double>(idx[d]) / static_cast<double>(spec.res[d] - 1)
                              : 0.0;
            pts(c, static_cast<Eigen::Index>(d)) = spec.lo[d] + frac * (spec.hi[d] - spec.lo[d]);
        }
        for (std::size_t d = 0; d < P; ++d) {
            if (++idx[d] < spec.res[d]) break;
            idx[d] = 0;
        }
    }
    auto preds = predict_latents(model, pts);
    for (long c = 0; c < cells; ++c) {
        GridRow row;
        row.context = pts.row(c);
        row.result = assess_prediction(preds[static_cast<std::size_t>(c)], fixed_y, cfg,
                                       static_cast<std::uint64_t>(c));
        out.push_back(std::move(row));
    }
    return out;
}

} // namespace ns
