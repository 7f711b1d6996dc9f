#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "calgp/gp_core.hpp"

namespace testing {

/// y = sin(3x) + (0.1 + 0.4|x|) eps, x uniform on [-2, 2].
inline calgp::Dataset heteroscedastic(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-2.0, 2.0);
    std::normal_distribution<double> eps(0.0, 1.0);
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 0) = ux(rng);
        y(i) = std::sin(3.0 * x(i, 0)) + (0.1 + 0.4 * std::abs(x(i, 0))) * eps(rng);
    }
    return calgp::Dataset::from_arrays(x, y);
}

/// Smooth d-dimensional target with homoscedastic noise.
inline calgp::Dataset smooth(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double noise = 0.1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-1.5, 1.5);
    std::normal_distribution<double> eps(0.0, 1.0);
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            x(i, j) = ux(rng);
            s += std::sin((j + 1.0) * x(i, j));
        }
        y(i) = s + noise * eps(rng);
    }
    return calgp::Dataset::from_arrays(x, y);
}

/// Piecewise-linear interpolation through the points (j/(n+1), a_(j)),
/// held constant outside them; written without the library's bracket logic.
inline double q_lin_oracle(double delta, std::vector<double> a) {
    std::sort(a.begin(), a.end());
    const auto n = a.size();
    std::vector<double> knots(n);
    for (std::size_t j = 0; j < n; ++j) knots[j] = static_cast<double>(j + 1) / static_cast<double>(n + 1);
    if (delta <= knots.front()) return a.front();
    if (delta >= knots.back()) return a.back();
    for (std::size_t j = 0; j + 1 < n; ++j) {
        if (delta == knots[j]) return a[j];
        if (delta > knots[j] && delta < knots[j + 1]) {
            const double w = (delta - knots[j]) / (knots[j + 1] - knots[j]);
            return a[j] + w * (a[j + 1] - a[j]);
        }
    }
    return a.back();
}

}  // namespace testing
