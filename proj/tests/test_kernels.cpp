#include <cmath>

#include <doctest.h>
#include <Eigen/Dense>

#include "calgp/hyperparameters.hpp"
#include "calgp/kernels.hpp"

using namespace calgp;

namespace {

double se_by_hand(double a, const Eigen::VectorXd& ls, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) r2 += (x(i) - y(i)) * (x(i) - y(i)) / (ls(i) * ls(i));
    return a * a * std::exp(-0.5 * r2);
}

}  // namespace

TEST_CASE("hyperparameters pack and unpack in log space") {
    Eigen::VectorXd ls(3);
    ls << 0.5, 2.0, 4.0;
    const Hyperparameters t = Hyperparameters::from_natural(1.5, ls);
    CHECK(t.amplitude() == doctest::Approx(1.5));
    CHECK(t.lengthscales()(1) == doctest::Approx(2.0));
    CHECK(t.inv_lengthscales()(2) == doctest::Approx(0.25));
    const Hyperparameters back = Hyperparameters::from_vector(t.to_vector());
    CHECK(back == t);
    CHECK(t.size() == 4);

    const Hyperparameters s = t.scaled(0.3);
    CHECK(s.log_amplitude == doctest::Approx(t.log_amplitude + 0.3));
    CHECK(componentwise_leq(t, s));
    CHECK_FALSE(componentwise_leq(s, t));
    CHECK(componentwise_min(s, t) == t);
    CHECK(interpolate(t, s, 0.0) == t);
    CHECK(interpolate(t, s, 1.0).log_inv_lengthscales.isApprox(s.log_inv_lengthscales));
    CHECK(interpolate(t, s, 0.5).log_amplitude == doctest::Approx(t.log_amplitude + 0.15));
}

TEST_CASE("ARD squared exponential matches the closed form") {
    Eigen::VectorXd ls(2);
    ls << 0.7, 1.9;
    const Hyperparameters t = Hyperparameters::from_natural(1.3, ls);
    Eigen::VectorXd x(2), y(2);
    x << 0.2, -1.0;
    y << 1.1, 0.4;
    CHECK(ArdSquaredExponential::eval(t, x, y) == doctest::Approx(se_by_hand(1.3, ls, x, y)).epsilon(1e-13));
    CHECK(ArdSquaredExponential::eval(t, x, x) == doctest::Approx(1.69).epsilon(1e-13));
    CHECK(ArdSquaredExponential::prior_variance(t) == doctest::Approx(1.69).epsilon(1e-13));
    CHECK_THROWS_AS(kernel_eval(t, x, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("OpenMP kernels agree with the serial references") {
    Eigen::VectorXd ls(3);
    ls << 0.6, 1.2, 2.5;
    const Hyperparameters t = Hyperparameters::from_natural(0.9, ls);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 3);
    const Eigen::MatrixXd q = Eigen::MatrixXd::Random(25, 3);

    const Eigen::MatrixXd k = gram_matrix(t, x);
    CHECK((k - serial::gram_matrix(t, x)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((k.diagonal().array() - 0.81).abs().maxCoeff() < 1e-14);
    CHECK(k(3, 7) == doctest::Approx(se_by_hand(0.9, ls, x.row(3).transpose(), x.row(7).transpose())));

    const Eigen::MatrixXd c = cross_covariance(t, q, x);
    CHECK(c.rows() == 25);
    CHECK((c - serial::cross_covariance(t, q, x)).cwiseAbs().maxCoeff() < 1e-14);

    Eigen::MatrixXd a = k;
    a.diagonal().array() += 0.04;
    const Eigen::MatrixXd l = a.llt().matrixL();
    const Eigen::VectorXd v = predictive_variance(l, c, 0.81, 0.04);
    const Eigen::VectorXd vs = serial::predictive_variance(l, c, 0.81, 0.04);
    CHECK((v - vs).cwiseAbs().maxCoeff() < 1e-12);

    // Direct formula with the inverse.
    const Eigen::MatrixXd ainv = a.inverse();
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const double direct = 0.81 - c.row(i).dot(ainv * c.row(i).transpose()) + 0.04;
        CHECK(v(i) == doctest::Approx(direct).epsilon(1e-9));
        CHECK(v(i) >= 0.04);
    }
}
