#pragma once

// Data-parallel covariance kernels. The functions in `calgp` are the OpenMP
// versions used by the library; `calgp::serial` holds straightforward
// single-threaded references that the tests and the benchmark compare against.

#include <Eigen/Core>

#include "calgp/hyperparameters.hpp"

namespace calgp {

/// K(theta) with [K]_ij = k(theta, x_i, x_j) over the rows of `inputs`.
Eigen::MatrixXd gram_matrix(const Hyperparameters& theta, const Eigen::MatrixXd& inputs);

/// Q x N matrix of k(theta, q_i, x_j).
Eigen::MatrixXd cross_covariance(const Hyperparameters& theta,
                                 const Eigen::MatrixXd& queries,
                                 const Eigen::MatrixXd& inputs);

/// prior_var - ||L^{-1} c_q||^2 + noise_var for each row c_q of `cross`,
/// clamped below at noise_var. `chol` is the lower Cholesky factor of K + s^2 I.
Eigen::VectorXd predictive_variance(const Eigen::MatrixXd& chol,
                                    const Eigen::MatrixXd& cross,
                                    double prior_var,
                                    double noise_var);

namespace serial {

Eigen::MatrixXd gram_matrix(const Hyperparameters& theta, const Eigen::MatrixXd& inputs);

Eigen::MatrixXd cross_covariance(const Hyperparameters& theta,
                                 const Eigen::MatrixXd& queries,
                                 const Eigen::MatrixXd& inputs);

Eigen::VectorXd predictive_variance(const Eigen::MatrixXd& chol,
                                    const Eigen::MatrixXd& cross,
                                    double prior_var,
                                    double noise_var);

}  // namespace serial
}  // namespace calgp
