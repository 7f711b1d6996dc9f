#pragma once

#include <Eigen/Core>

namespace calgp {

/// Kernel hyperparameters theta of the ARD squared-exponential kernel, stored
/// in log space: the signal amplitude a and one inverse lengthscale 1/l_i per
/// input dimension. The noise level is deliberately not part of theta.
///
/// Ordering between two hyperparameter vectors is componentwise in
/// (amplitude, inverse lengthscales); since exp is increasing that is the
/// same as componentwise order of the stored logs.
struct Hyperparameters {
    double log_amplitude = 0.0;
    Eigen::VectorXd log_inv_lengthscales;

    Hyperparameters() = default;
    Hyperparameters(double log_amp, Eigen::VectorXd log_inv_ls)
        : log_amplitude(log_amp), log_inv_lengthscales(std::move(log_inv_ls)) {}

    /// Build from natural (non-log) amplitude and lengthscales.
    static Hyperparameters from_natural(double amplitude, const Eigen::VectorXd& lengthscales);

    /// Unpacks [log a, log(1/l_1), ..., log(1/l_d)].
    static Hyperparameters from_vector(const Eigen::Ref<const Eigen::VectorXd>& packed);

    Eigen::Index dim() const { return log_inv_lengthscales.size(); }
    Eigen::Index size() const { return dim() + 1; }

    double amplitude() const;
    Eigen::VectorXd inv_lengthscales() const;
    Eigen::VectorXd lengthscales() const;

    /// Packs as [log a, log(1/l_1), ..., log(1/l_d)].
    Eigen::VectorXd to_vector() const;

    bool all_finite() const;

    /// Adds a constant to every log coordinate, i.e. multiplies amplitude and
    /// every inverse lengthscale by exp(log_factor).
    Hyperparameters scaled(double log_factor) const;

    friend bool operator==(const Hyperparameters& a, const Hyperparameters& b);
};

/// theta <= theta' componentwise.
bool componentwise_leq(const Hyperparameters& lhs, const Hyperparameters& rhs);

Hyperparameters componentwise_min(const Hyperparameters& lhs, const Hyperparameters& rhs);
Hyperparameters componentwise_max(const Hyperparameters& lhs, const Hyperparameters& rhs);

/// Straight-line interpolation between two hyperparameter vectors in log
/// space; t = 0 gives `from`, t = 1 gives `to`.
Hyperparameters interpolate(const Hyperparameters& from, const Hyperparameters& to, double t);

/// ARD squared-exponential kernel
///   k(x, x') = a^2 exp(-1/2 sum_i ((x_i - x'_i) / l_i)^2).
/// Only kernel shipped; everything that evaluates covariances goes through
/// this type so another stationary kernel could be dropped in alongside it.
struct ArdSquaredExponential {
    static double eval(const Hyperparameters& theta,
                       const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& x2);

    /// k(x, x) for any x.
    static double prior_variance(const Hyperparameters& theta);
};

/// Checked kernel evaluation: throws std::invalid_argument on dimension mismatch.
double kernel_eval(const Hyperparameters& theta,
                   const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x2);

}  // namespace calgp
