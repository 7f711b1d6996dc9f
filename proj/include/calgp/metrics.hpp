#pragma once

// Calibration and sharpness diagnostics for any QuantileModel.

#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "calgp/gp_core.hpp"
#include "calgp/quantile_model.hpp"

namespace calgp {

/// Fraction of test points with y <= quantile(p, x).
double observed_confidence(const QuantileModel& model, const Dataset& test, double p);

/// p_j = (j - 1)/(m - 1), j = 1..m.
std::vector<double> confidence_grid(std::size_t m = 21);

/// (p_j, observed_confidence(p_j)) over confidence_grid(m).
std::vector<std::pair<double, double>> reliability_curve(const QuantileModel& model, const Dataset& test,
                                                         std::size_t m = 21);

/// sum_j (p_j - p_hat_j)^2.
double ece(const std::vector<std::pair<double, double>>& curve);
double ece(const QuantileModel& model, const Dataset& test, std::size_t m = 21);

struct SharpnessOptions {
    /// Moment integration uses the midpoint levels (k - 1/2)/K, k = 1..K.
    std::size_t std_levels = 200;
    /// Density step as a fraction of the local interquartile width.
    double step_fraction = 1e-3;
    double density_floor = 1e-12;
    /// NLL is averaged over the first this-many test points (0 = all).
    std::size_t nll_max_points = 0;
    bool compute_nll = true;
};

struct Sharpness {
    double avg_std = 0.0;
    double nll = 0.0;
    double ci95_width = 0.0;
    /// Test points whose density estimate was clamped to the floor.
    std::size_t floored_points = 0;
    std::size_t nll_points = 0;
};

Sharpness sharpness(const QuantileModel& model, const Dataset& test, const SharpnessOptions& options = {});

/// Per-point std of the distribution implied by the quantile curve.
Eigen::VectorXd implied_stddevs(const QuantileModel& model, const Eigen::MatrixXd& inputs, std::size_t levels = 200);

/// -log density at y, the density taken from a central difference of cdf in y.
/// Sets *floored when the estimate had to be clamped.
double negative_log_density(const QuantileModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                            const SharpnessOptions& options = {}, bool* floored = nullptr);

struct MetricsReport {
    double ece = 0.0;
    std::vector<std::pair<double, double>> observed;
    double avg_std = 0.0;
    double nll = 0.0;
    double ci95_width = 0.0;
    std::size_t floored_points = 0;
};

MetricsReport evaluate(const QuantileModel& model, const Dataset& test, std::size_t m = 21,
                       const SharpnessOptions& options = {});

}  // namespace calgp
