#pragma once

// Sharp calibration of a GP: instead of scaling the regressor's posterior
// standard deviation, every confidence level delta gets its own kernel
// hyperparameters theta_delta, chosen to pull the delta-quantile
//     mu(theta_R, x) + beta_delta * sigma(theta_delta, x)
// as close to the mean as possible while beta_delta is pinned by the
// empirical quantile of the calibration z-scores. Levels are chained so that
// theta grows away from the level where beta changes sign, which together with
// the monotonicity of the posterior variance in theta keeps the quantiles
// monotone in delta.

#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "calgp/gp_core.hpp"
#include "calgp/quantile_model.hpp"

namespace calgp {

/// Sorted positions (0-based) and weight such that
/// q_lin = (1 - weight) * a_(lower) + weight * a_(upper).
struct QlinBracket {
    Eigen::Index lower = 0;
    Eigen::Index upper = 0;
    double weight = 0.0;
};

/// Where delta falls among the knots j/(n+1), j = 1..n. Outside the knot range
/// the bracket collapses onto the first or last order statistic.
QlinBracket q_lin_bracket(double delta, Eigen::Index n);

/// Monotone piecewise-linear empirical quantile: maps delta = j/(n+1) to the
/// j-th smallest entry of `a`, interpolates linearly in between and is
/// constant outside [1/(n+1), n/(n+1)]. Throws std::invalid_argument if `a` is
/// empty or delta is not in [0, 1].
double q_lin(double delta, std::span<const double> a);

/// Same as q_lin for an already ascending `sorted`.
double q_lin_sorted(double delta, std::span<const double> sorted);

/// Indices that sort `values` ascending; ties keep their original order.
std::vector<Eigen::Index> stable_argsort(const Eigen::VectorXd& values);

/// y_cal - mu(theta_R, x_cal).
Eigen::VectorXd residuals(const Dataset& cal_data, const PosteriorState& regressor);

/// Elementwise residual / sigma. Throws if any sigma is not positive.
Eigen::VectorXd z_scores(const Eigen::VectorXd& residuals, const Eigen::VectorXd& sigmas);

/// sigma(theta, x) for the GP on `train_inputs` with noise level `sigma0`.
/// This is the single code path used for every beta that gets stored.
Eigen::VectorXd calibration_stddevs(const Hyperparameters& theta,
                                    const Eigen::MatrixXd& train_inputs,
                                    double sigma0,
                                    const Eigen::MatrixXd& queries);

double beta_of(double delta, const Hyperparameters& theta, const Dataset& cal_data,
               const PosteriorState& regressor);

/// sum_i [beta(theta) * sigma(theta, x_cal^i)]^2.
double sharpness_loss(double delta, const Hyperparameters& theta, const Dataset& cal_data,
                      const PosteriorState& regressor);

/// Sharpness loss and its gradient with respect to log theta, for fixed
/// training inputs, noise level and calibration residuals.
class SharpnessObjective {
public:
    SharpnessObjective(Eigen::MatrixXd train_inputs, double sigma0,
                       Eigen::MatrixXd cal_inputs, Eigen::VectorXd cal_residuals);

    Eigen::VectorXd stddevs(const Hyperparameters& theta) const;
    double beta(double delta, const Hyperparameters& theta) const;
    double loss(double delta, const Hyperparameters& theta) const;

    /// Gradient w.r.t. theta.to_vector(). At a knot the subgradient from the
    /// left is used; away from ties the loss is differentiable.
    double loss_with_gradient(double delta, const Hyperparameters& theta, Eigen::VectorXd& grad) const;

    Eigen::Index cal_size() const { return cal_inputs_.rows(); }
    const Eigen::VectorXd& cal_residuals() const { return residuals_; }

private:
    Eigen::MatrixXd train_inputs_;
    double sigma0_;
    Eigen::MatrixXd cal_inputs_;
    Eigen::VectorXd residuals_;
};

enum class CalibrationMode {
    full,         ///< gradient search over every coordinate of theta
    line_search,  ///< theta_delta restricted to a common rescaling of theta_R
};

struct CalibrationConfig {
    CalibrationMode mode = CalibrationMode::full;
    int max_iterations = 300;
    double relative_tolerance = 1e-6;
    /// Number of training rows used while searching theta_delta; beta is
    /// always recomputed with the full training set.
    std::optional<Eigen::Index> subset_cap;
    /// Half-width of the log-rescaling interval searched in line-search mode.
    double log_scale_range = 4.0;
};

struct CalibrationLevel {
    double delta = 0.0;
    double beta = 0.0;
    Hyperparameters theta;
    /// Sharpness loss at (beta, theta) on the full training set.
    double loss = 0.0;
    /// Optimizer gave up early; the best iterate seen was kept.
    bool warning = false;
    /// theta was copied from the inner neighbour to restore ordering.
    bool reused_neighbour = false;
};

CalibrationLevel calibrate_single(double delta, const Hyperparameters& init_theta,
                                  const Dataset& cal_data, const PosteriorState& regressor,
                                  const CalibrationConfig& config = {});

/// delta_j = j / (n_cal + 1), j = 1..n_cal.
std::vector<double> theorem_grid(Eigen::Index n_cal);

/// The first grid thinned to at most `cap` levels, still on knots j/(n_cal+1).
std::vector<double> theorem_grid(Eigen::Index n_cal, std::size_t cap);

struct ZeroCrossing {
    double delta = 0.0;
    Hyperparameters theta;
};

/// beta_hat(delta) and theta_hat(delta) through the trained levels, on top of a
/// fixed regressor mean.
class CalibrationModel final : public QuantileModel {
public:
    /// Validates the ordering invariants and inserts the zero-crossing knot.
    /// Throws std::invalid_argument naming the first offending level.
    CalibrationModel(std::shared_ptr<const PosteriorState> regressor,
                     std::vector<CalibrationLevel> levels,
                     Eigen::VectorXd cal_residuals = {});

    const std::vector<CalibrationLevel>& levels() const { return levels_; }
    const std::optional<ZeroCrossing>& zero_crossing() const { return zero_crossing_; }
    const PosteriorState& regressor() const { return *regressor_; }
    std::shared_ptr<const PosteriorState> regressor_ptr() const { return regressor_; }
    const Eigen::VectorXd& cal_residuals() const { return cal_residuals_; }

    double beta_hat(double delta) const;
    Hyperparameters theta_hat(double delta) const;

    /// sigma(theta_hat(delta), x) for each row.
    Eigen::VectorXd widths(double delta, const Eigen::MatrixXd& inputs) const;

    Eigen::VectorXd means(const Eigen::MatrixXd& inputs) const override;
    Eigen::VectorXd quantiles(double delta, const Eigen::MatrixXd& inputs) const override;
    double cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const override;
    std::pair<double, double> delta_range() const override;
    Eigen::MatrixXd quantile_table(const std::vector<double>& deltas, const Eigen::MatrixXd& inputs) const override;

    /// Number of quantile/cdf queries that had to be clamped into delta_range().
    std::size_t clamp_count() const;

private:
    struct Knot {
        double delta;
        double beta;
        Hyperparameters theta;
    };

    std::shared_ptr<const PosteriorState> variance_state(std::size_t knot) const;
    std::shared_ptr<const PosteriorState> variance_state(const Hyperparameters& theta) const;
    double offset(double delta, const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double clamp_delta(double delta) const;

    std::shared_ptr<const PosteriorState> regressor_;
    std::vector<CalibrationLevel> levels_;
    std::optional<ZeroCrossing> zero_crossing_;
    Eigen::VectorXd cal_residuals_;
    std::vector<Knot> knots_;  // levels plus the zero crossing, sorted by delta

    struct Cache {
        std::mutex mutex;
        std::vector<std::shared_ptr<const PosteriorState>> states;
        std::size_t clamps = 0;
    };
    std::shared_ptr<Cache> cache_;
};

/// Trains one (beta, theta) pair per level with the ordering constraints and
/// returns the interpolated model. `deltas` must be strictly increasing in
/// (0, 1).
CalibrationModel calibrate_all(const std::vector<double>& deltas, const Dataset& cal_data,
                               std::shared_ptr<const PosteriorState> regressor,
                               const CalibrationConfig& config = {});

/// #{i : z_i(theta_delta) <= beta_delta} for every stored level, using the same
/// sigma computation the betas were built with. Dividing by n_cal + 1 gives
/// the in-sample coverage, which is exactly j/(n_cal + 1) at delta_j = j/(n_cal + 1).
std::vector<Eigen::Index> in_sample_counts(const CalibrationModel& model, const Dataset& cal_data);

}  // namespace calgp
