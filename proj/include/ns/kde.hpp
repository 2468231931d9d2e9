#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ns/errors.hpp"

namespace ns {

enum class BandwidthRule { Silverman, Fixed };

// Gaussian-kernel density on an even grid spanning the samples plus 3 bandwidths.
struct KdeDensity {
    Eigen::VectorXd samples;
    double bandwidth = 0.0;
    Eigen::VectorXd grid;           // ascending, evenly spaced
    Eigen::VectorXd density_values; // aligned with grid, nonnegative

    double trapezoid_integral() const {
        double h = grid[1] - grid[0];
        double s = 0.5 * (density_values[0] + density_values[density_values.size() - 1]);
        s += density_values.segment(1, density_values.size() - 2).sum();
        return s * h;
    }
};

namespace detail {

inline double silverman_bandwidth(std::vector<double> v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / (n - 1.0));
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
        double pos = q * (n - 1.0);
        std::size_t lo = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(lo);
        return lo + 1 < v.size() ? v[lo] * (1.0 - frac) + v[lo + 1] * frac : v[lo];
    };
    double iqr = quantile(0.75) - quantile(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    return 0.9 * spread * std::pow(n, -0.2);
}

} // namespace detail

// Linear binning onto the output grid followed by discrete Gaussian smoothing.
// Exact within binning error, which is negligible at grid_size >= 512.
inline KdeDensity kde_build(const Eigen::VectorXd& samples, BandwidthRule rule,
                            double fixed_h = 0.0, int grid_size = 1024) {
    const auto n = samples.size();
    if (n < 10) throw DegenerateInputError("kde_build requires at least 10 samples");
    if (!samples.allFinite()) throw DegenerateInputError("kde_build requires finite samples");

    double lo = samples.minCoeff(), hi = samples.maxCoeff();
    if (hi - lo <= 0.0) throw DegenerateInputError("kde_build: zero-variance samples");

    double h;
    if (rule == BandwidthRule::Fixed) {
        if (!(fixed_h > 0.0)) throw ConfigError("fixed bandwidth must be positive");
        h = fixed_h;
    } else {
        h = detail::silverman_bandwidth(std::vector<double>(samples.data(), samples.data() + n));
        if (!(h > 0.0)) throw DegenerateInputError("kde_build: degenerate bandwidth");
    }

    KdeDensity out;
    out.samples = samples;
    out.bandwidth = h;
    out.grid = Eigen::VectorXd::LinSpaced(grid_size, lo - 3.0 * h, hi + 3.0 * h);
    const double step = out.grid[1] - out.grid[0];

    // mass per grid node (linear binning)
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(grid_size);
    for (Eigen::Index i = 0; i < n; ++i) {
        double pos = (samples[i] - out.grid[0]) / step;
        auto j = static_cast<Eigen::Index>(pos);
        if (j >= grid_size - 1) j = grid_size - 2;
        double frac = pos - static_cast<double>(j);
        mass[j] += 1.0 - frac;
        mass[j + 1] += frac;
    }
    mass /= static_cast<double>(n);

    // Gaussian kernel truncated at 6 bandwidths
    auto radius = static_cast<Eigen::Index>(std::ceil(6.0 * h / step));
    Eigen::VectorXd kernel(2 * radius + 1);
    const double norm = 1.0 / (h * std::sqrt(2.0 * M_PI));
    for (Eigen::Index r = -radius; r <= radius; ++r) {
        double d = static_cast<double>(r) * step / h;
        kernel[r + radius] = norm * std::exp(-0.5 * d * d);
    }

    out.density_values = Eigen::VectorXd::Zero(grid_size);
    for (Eigen::Index j = 0; j < grid_size; ++j) {
        if (mass[j] == 0.0) continue;
        Eigen::Index a = std::max<Eigen::Index>(0, j - radius);
        Eigen::Index b = std::min<Eigen::Index>(grid_size - 1, j + radius);
        out.density_values.segment(a, b - a + 1) +=
            mass[j] * kernel.segment(a - j + radius, b - a + 1);
    }
    return out;
}

} // namespace ns
