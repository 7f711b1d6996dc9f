#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

namespace calgp {

/// Anything that can produce predictive delta-quantiles and invert them.
/// Implementations are immutable after construction; all methods are safe to
/// call concurrently.
class QuantileModel {
public:
    virtual ~QuantileModel() = default;

    /// Predictive mean mu(x) for each row.
    virtual Eigen::VectorXd means(const Eigen::MatrixXd& inputs) const = 0;

    /// delta-quantile for each row of `inputs`.
    virtual Eigen::VectorXd quantiles(double delta, const Eigen::MatrixXd& inputs) const = 0;

    /// Level delta whose quantile at x equals y, clamped to delta_range().
    virtual double cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const = 0;

    /// Levels outside this interval are clamped by quantile()/cdf().
    virtual std::pair<double, double> delta_range() const { return {0.0, 1.0}; }

    double quantile(double delta, const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return quantiles(delta, x.transpose())(0);
    }

    /// cdf for every (row, target) pair.
    virtual Eigen::VectorXd cdfs(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets) const;

    /// Column k holds quantiles(deltas[k], inputs).
    virtual Eigen::MatrixXd quantile_table(const std::vector<double>& deltas, const Eigen::MatrixXd& inputs) const;
};

}  // namespace calgp
