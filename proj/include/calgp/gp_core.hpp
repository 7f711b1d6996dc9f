#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "calgp/hyperparameters.hpp"

namespace calgp {

/// Inputs (N x d, one point per row) and targets, plus the affine
/// standardization that was applied to reach these values.
struct Dataset {
    Eigen::MatrixXd inputs;
    Eigen::VectorXd targets;
    Eigen::VectorXd feature_means;
    Eigen::VectorXd feature_stds;
    double target_mean = 0.0;
    double target_std = 1.0;
    std::vector<std::string> feature_names;
    std::string target_name;

    /// Wraps raw arrays with an identity standardization.
    static Dataset from_arrays(Eigen::MatrixXd inputs, Eigen::VectorXd targets);

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dim() const { return inputs.cols(); }

    /// Throws std::invalid_argument if any invariant is violated.
    void validate() const;

    /// Rows selected by `index`, keeping the standardization metadata.
    Dataset subset(const std::vector<Eigen::Index>& index) const;
};

/// A GP conditioned on training data: Cholesky factor of K(theta) + s0^2 I and
/// the weight vector (K + s0^2 I)^{-1} y. Immutable once built.
class PosteriorState {
public:
    PosteriorState(Eigen::MatrixXd inputs, const Eigen::VectorXd& targets,
                   Hyperparameters theta, double noise_std);

    double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double stddev(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double variance(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    Eigen::VectorXd means(const Eigen::MatrixXd& queries) const;
    Eigen::VectorXd stddevs(const Eigen::MatrixXd& queries) const;
    Eigen::VectorXd variances(const Eigen::MatrixXd& queries) const;

    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::VectorXd& targets() const { return targets_; }
    const Hyperparameters& theta() const { return theta_; }
    double noise_std() const { return noise_std_; }
    /// Diagonal jitter that had to be added on top of s0^2 (0 if none).
    double jitter() const { return jitter_; }
    const Eigen::MatrixXd& chol() const { return chol_; }
    const Eigen::VectorXd& weights() const { return weights_; }

private:
    Eigen::MatrixXd inputs_;
    Eigen::VectorXd targets_;
    Hyperparameters theta_;
    double noise_std_;
    double jitter_ = 0.0;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd weights_;
};

PosteriorState fit_posterior(const Dataset& data, const Hyperparameters& theta, double sigma0);

/// Lower Cholesky factor of `a` with the jitter ladder 1e-10 * trace/N, x10 up
/// to 1e-4 * trace/N. Throws NumericalError carrying the last jitter tried.
/// `jitter_used` receives the jitter that succeeded.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& a, double* jitter_used = nullptr);

struct LogLikelihood {
    double value = 0.0;
    /// Derivative w.r.t. [log a, log(1/l_1) .. log(1/l_d), log s0].
    Eigen::VectorXd gradient;
};

double log_marginal_likelihood(const Dataset& data, const Hyperparameters& theta, double sigma0);

LogLikelihood log_marginal_likelihood_with_gradient(const Dataset& data,
                                                    const Hyperparameters& theta,
                                                    double sigma0);

struct HyperparameterSearchConfig {
    int restarts = 5;
    int max_iterations = 500;
    double gradient_tolerance = 1e-5;
    std::uint64_t seed = 0;
};

struct FittedHyperparameters {
    Hyperparameters theta;
    double noise_std = 0.0;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    int failed_restarts = 0;
};

/// Maximizes the log marginal likelihood jointly over theta and s0 with
/// L-BFGS from `init` plus `config.restarts` random starts. Throws
/// OptimizationError if every start fails numerically.
FittedHyperparameters optimize_hyperparameters(const Dataset& data,
                                               const Hyperparameters& init,
                                               double sigma0_init,
                                               const HyperparameterSearchConfig& config = {});

/// Reasonable starting point: unit-variance amplitude scaled to std(y),
/// lengthscales at half the per-dimension input range.
Hyperparameters default_hyperparameters(const Dataset& data);

struct MonotonicityReport {
    /// max over probes and path segments of sigma^2(lower) - sigma^2(upper).
    double max_violation = 0.0;
    Eigen::Index worst_probe = -1;
    int worst_segment = -1;
    bool violated = false;
};

/// Empirical check that the posterior variance grows along the straight path
/// from theta_low to theta_high (log space). Violations beyond `tolerance` are
/// reported, not thrown.
MonotonicityReport check_monotonicity(const Dataset& data,
                                      const Hyperparameters& theta_low,
                                      const Hyperparameters& theta_high,
                                      double sigma0,
                                      const Eigen::MatrixXd& probe_points,
                                      int segments = 10,
                                      double tolerance = 1e-8);

}  // namespace calgp
