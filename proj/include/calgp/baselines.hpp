#pragma once

// Recalibrators that reuse the regressor's own hyperparameters.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "calgp/gp_core.hpp"
#include "calgp/quantile_model.hpp"

namespace calgp {

enum class BaselineKind {
    scaled,             ///< RK: mu + q_lin(delta, z) * sigma_R
    randomized_scaled,  ///< RV: as RK with a random monotone interpolation between knots
    constant_width,     ///< RM: mu + q_lin(delta, residuals)
};

std::string to_string(BaselineKind kind);
/// Accepts the long names above and the short tags "rk", "rv", "rm".
BaselineKind baseline_kind_from_string(const std::string& name);

class BaselineModel final : public QuantileModel {
public:
    /// `scores` must be sorted ascending.
    BaselineModel(BaselineKind kind, std::shared_ptr<const PosteriorState> regressor,
                  Eigen::VectorXd scores, std::uint64_t seed = 0);

    BaselineKind kind() const { return kind_; }
    const PosteriorState& regressor() const { return *regressor_; }
    std::shared_ptr<const PosteriorState> regressor_ptr() const { return regressor_; }
    const Eigen::VectorXd& scores() const { return scores_; }
    std::uint64_t seed() const { return seed_; }

    /// Score-space quantile: q_lin for RK/RM, randomized for RV.
    double score_quantile(double delta) const;

    Eigen::VectorXd means(const Eigen::MatrixXd& inputs) const override;
    Eigen::VectorXd quantiles(double delta, const Eigen::MatrixXd& inputs) const override;
    double cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const override;
    std::pair<double, double> delta_range() const override;
    Eigen::MatrixXd quantile_table(const std::vector<double>& deltas, const Eigen::MatrixXd& inputs) const override;

private:
    /// Exponent of the monotone map w -> w^gamma used inside knot cell `cell`.
    double cell_exponent(Eigen::Index cell) const;

    BaselineKind kind_;
    std::shared_ptr<const PosteriorState> regressor_;
    Eigen::VectorXd scores_;
    std::uint64_t seed_;
};

BaselineModel fit_baseline(BaselineKind kind, const Dataset& cal_data,
                           std::shared_ptr<const PosteriorState> regressor, std::uint64_t seed = 0);

/// The uncalibrated GP: mu + Phi^{-1}(delta) * sigma_R.
class GaussianModel final : public QuantileModel {
public:
    explicit GaussianModel(std::shared_ptr<const PosteriorState> regressor);

    const PosteriorState& regressor() const { return *regressor_; }
    std::shared_ptr<const PosteriorState> regressor_ptr() const { return regressor_; }

    Eigen::VectorXd means(const Eigen::MatrixXd& inputs) const override;
    Eigen::VectorXd quantiles(double delta, const Eigen::MatrixXd& inputs) const override;
    double cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const override;
    std::pair<double, double> delta_range() const override;
    Eigen::MatrixXd quantile_table(const std::vector<double>& deltas, const Eigen::MatrixXd& inputs) const override;

private:
    std::shared_ptr<const PosteriorState> regressor_;
};

/// Levels at which an unbounded Gaussian quantile is truncated.
inline constexpr double kGaussianTail = 1e-9;

}  // namespace calgp
