#include "calgp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace calgp {

namespace {

void check_dims(const Hyperparameters& theta, const Eigen::MatrixXd& m, const char* who) {
    if (m.cols() != theta.dim()) {
        throw std::invalid_argument(std::string(who) + ": input dimension does not match hyperparameters");
    }
}

}  // namespace

Eigen::MatrixXd gram_matrix(const Hyperparameters& theta, const Eigen::MatrixXd& inputs) {
    check_dims(theta, inputs, "gram_matrix");
    const Eigen::Index n = inputs.rows();
    const Eigen::MatrixXd scaled = inputs * theta.inv_lengthscales().asDiagonal();
    const double amp2 = ArdSquaredExponential::prior_variance(theta);
    Eigen::MatrixXd k(n, n);

#pragma omp parallel for schedule(dynamic, 16)
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = amp2;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r2 = (scaled.row(i) - scaled.row(j)).squaredNorm();
            const double v = amp2 * std::exp(-0.5 * r2);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

Eigen::MatrixXd cross_covariance(const Hyperparameters& theta,
                                 const Eigen::MatrixXd& queries,
                                 const Eigen::MatrixXd& inputs) {
    check_dims(theta, queries, "cross_covariance");
    check_dims(theta, inputs, "cross_covariance");
    const Eigen::VectorXd s = theta.inv_lengthscales();
    const Eigen::MatrixXd sq = queries * s.asDiagonal();
    const Eigen::MatrixXd sx = inputs * s.asDiagonal();
    const double amp2 = ArdSquaredExponential::prior_variance(theta);
    Eigen::MatrixXd k(queries.rows(), inputs.rows());

#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < sq.rows(); ++i) {
        for (Eigen::Index j = 0; j < sx.rows(); ++j) {
            k(i, j) = amp2 * std::exp(-0.5 * (sq.row(i) - sx.row(j)).squaredNorm());
        }
    }
    return k;
}

Eigen::VectorXd predictive_variance(const Eigen::MatrixXd& chol,
                                    const Eigen::MatrixXd& cross,
                                    double prior_var,
                                    double noise_var) {
    if (cross.cols() != chol.rows()) {
        throw std::invalid_argument("predictive_variance: cross covariance width mismatch");
    }
    Eigen::VectorXd out(cross.rows());
    const auto lower = chol.triangularView<Eigen::Lower>();

    // One independent vector solve per query keeps each result independent of
    // batch composition and thread count.
#pragma omp parallel for schedule(static)
    for (Eigen::Index q = 0; q < cross.rows(); ++q) {
        Eigen::VectorXd v = cross.row(q).transpose();
        lower.solveInPlace(v);
        out(q) = std::max(prior_var - v.squaredNorm(), 0.0) + noise_var;
    }
    return out;
}

namespace serial {

Eigen::MatrixXd gram_matrix(const Hyperparameters& theta, const Eigen::MatrixXd& inputs) {
    check_dims(theta, inputs, "gram_matrix");
    const Eigen::Index n = inputs.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            k(i, j) = ArdSquaredExponential::eval(theta, inputs.row(i).transpose(),
                                                  inputs.row(j).transpose());
        }
    }
    return k;
}

Eigen::MatrixXd cross_covariance(const Hyperparameters& theta,
                                 const Eigen::MatrixXd& queries,
                                 const Eigen::MatrixXd& inputs) {
    check_dims(theta, queries, "cross_covariance");
    check_dims(theta, inputs, "cross_covariance");
    Eigen::MatrixXd k(queries.rows(), inputs.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        for (Eigen::Index j = 0; j < inputs.rows(); ++j) {
            k(i, j) = ArdSquaredExponential::eval(theta, queries.row(i).transpose(),
                                                  inputs.row(j).transpose());
        }
    }
    return k;
}

Eigen::VectorXd predictive_variance(const Eigen::MatrixXd& chol,
                                    const Eigen::MatrixXd& cross,
                                    double prior_var,
                                    double noise_var) {
    if (cross.cols() != chol.rows()) {
        throw std::invalid_argument("predictive_variance: cross covariance width mismatch");
    }
    const Eigen::Index n = chol.rows();
    Eigen::VectorXd out(cross.rows());
    Eigen::VectorXd v(n);
    for (Eigen::Index q = 0; q < cross.rows(); ++q) {
        // plain forward substitution
        for (Eigen::Index i = 0; i < n; ++i) {
            double acc = cross(q, i);
            for (Eigen::Index j = 0; j < i; ++j) acc -= chol(i, j) * v(j);
            v(i) = acc / chol(i, i);
        }
        out(q) = std::max(prior_var - v.squaredNorm(), 0.0) + noise_var;
    }
    return out;
}

}  // namespace serial
}  // namespace calgp
