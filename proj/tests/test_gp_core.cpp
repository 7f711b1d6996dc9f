#include <cmath>
#include <numbers>

#include <doctest.h>
#include <Eigen/Dense>

#include "calgp/error.hpp"
#include "calgp/gp_core.hpp"
#include "helpers.hpp"

using namespace calgp;

TEST_CASE("two-point posterior matches the explicit 2x2 inverse") {
    Eigen::MatrixXd x(2, 1);
    x << 0.0, 1.0;
    Eigen::VectorXd y(2);
    y << 1.0, -1.0;
    const double s0 = 0.1;
    const Hyperparameters t = Hyperparameters::from_natural(1.0, Eigen::VectorXd::Ones(1));
    const PosteriorState post(x, y, t, s0);

    const double k01 = std::exp(-0.5);
    const double d = 1.0 + s0 * s0;
    const double det = d * d - k01 * k01;
    Eigen::Matrix2d inv;
    inv << d / det, -k01 / det, -k01 / det, d / det;
    Eigen::Vector2d ks;
    ks << std::exp(-0.125), std::exp(-0.125);
    Eigen::VectorXd q(1);
    q << 0.5;
    CHECK(post.mean(q) == doctest::Approx(ks.dot(inv * y)).epsilon(1e-13));
    CHECK(post.variance(q) == doctest::Approx(1.0 - ks.dot(inv * ks) + s0 * s0).epsilon(1e-13));
    CHECK(post.stddev(q) == doctest::Approx(std::sqrt(post.variance(q))));
    CHECK(post.jitter() == 0.0);

    const Dataset data = Dataset::from_arrays(x, y);
    const double lml = -0.5 * y.dot(inv * y) - 0.5 * std::log(det) - std::log(2.0 * std::numbers::pi);
    CHECK(log_marginal_likelihood(data, t, s0) == doctest::Approx(lml).epsilon(1e-13));
}

TEST_CASE("log marginal likelihood agrees with a dense determinant") {
    const Dataset data = testing::smooth(12, 2, 5);
    Eigen::VectorXd ls(2);
    ls << 0.8, 1.4;
    const Hyperparameters t = Hyperparameters::from_natural(1.2, ls);
    const double s0 = 0.3;
    Eigen::MatrixXd a(12, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            a(i, j) = ArdSquaredExponential::eval(t, data.inputs.row(i).transpose(), data.inputs.row(j).transpose()) +
                      (i == j ? s0 * s0 : 0.0);
    const double expected = -0.5 * data.targets.dot(a.fullPivLu().solve(data.targets)) -
                            0.5 * std::log(a.determinant()) - 6.0 * std::log(2.0 * std::numbers::pi);
    CHECK(log_marginal_likelihood(data, t, s0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("log marginal likelihood gradient matches central differences") {
    const Dataset data = testing::smooth(30, 3, 11);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 0.7);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd p(5);
        for (int i = 0; i < 5; ++i) p(i) = u(rng);
        p(4) = std::log(0.2) + 0.3 * u(rng);
        const Hyperparameters t = Hyperparameters::from_vector(p.head(4));
        const LogLikelihood ll = log_marginal_likelihood_with_gradient(data, t, std::exp(p(4)));
        CHECK(ll.value == doctest::Approx(log_marginal_likelihood(data, t, std::exp(p(4)))).epsilon(1e-12));
        for (int i = 0; i < 5; ++i) {
            const double h = 1e-5;
            Eigen::VectorXd pp = p, pm = p;
            pp(i) += h;
            pm(i) -= h;
            const double fp = log_marginal_likelihood(data, Hyperparameters::from_vector(pp.head(4)), std::exp(pp(4)));
            const double fm = log_marginal_likelihood(data, Hyperparameters::from_vector(pm.head(4)), std::exp(pm(4)));
            const double fd = (fp - fm) / (2.0 * h);
            CHECK(std::abs(ll.gradient(i) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("robust Cholesky climbs the jitter ladder") {
    double jitter = -1.0;
    const Eigen::MatrixXd pd = Eigen::MatrixXd::Identity(3, 3) * 2.0;
    const Eigen::MatrixXd l = robust_cholesky(pd, &jitter);
    CHECK(jitter == 0.0);
    CHECK((l * l.transpose() - pd).norm() < 1e-14);

    const Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(3, 3);
    robust_cholesky(singular, &jitter);
    CHECK(jitter > 0.0);
    CHECK(jitter <= 1e-4 * 3.0 / 3.0 * 1.0000001);

    const Eigen::MatrixXd negative = -Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(robust_cholesky(negative), NumericalError);
}

TEST_CASE("hyperparameter search improves the likelihood and is reproducible") {
    const Dataset data = testing::smooth(40, 2, 3);
    const Hyperparameters init = default_hyperparameters(data);
    HyperparameterSearchConfig cfg;
    cfg.restarts = 2;
    cfg.seed = 9;
    const FittedHyperparameters a = optimize_hyperparameters(data, init, 0.5, cfg);
    const FittedHyperparameters b = optimize_hyperparameters(data, init, 0.5, cfg);
    CHECK(a.log_likelihood >= log_marginal_likelihood(data, init, 0.5));
    CHECK(a.log_likelihood == doctest::Approx(log_marginal_likelihood(data, a.theta, a.noise_std)).epsilon(1e-12));
    CHECK(a.theta == b.theta);
    CHECK(a.noise_std == b.noise_std);
    CHECK(a.noise_std > 0.0);
}

TEST_CASE("posterior variance grows along an increasing hyperparameter path") {
    const Dataset data = testing::smooth(25, 2, 8);
    const Hyperparameters low = Hyperparameters::from_natural(0.8, Eigen::VectorXd::Constant(2, 1.0));
    const Hyperparameters high = low.scaled(0.7);
    const Eigen::MatrixXd probes = Eigen::MatrixXd::Random(30, 2) * 1.5;
    const MonotonicityReport r = check_monotonicity(data, low, high, 0.1, probes);
    CHECK_FALSE(r.violated);
    CHECK_THROWS_AS(check_monotonicity(data, high, low, 0.1, probes), std::invalid_argument);
}

TEST_CASE("dataset validation and subsetting") {
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 1.0, 2.0;
    Eigen::VectorXd y(3);
    y << 1.0, 2.0, std::nan("");
    CHECK_THROWS_AS(Dataset::from_arrays(x, y), std::invalid_argument);
    y(2) = 3.0;
    const Dataset d = Dataset::from_arrays(x, y);
    const Dataset s = d.subset({2, 0});
    CHECK(s.size() == 2);
    CHECK(s.targets(0) == 3.0);
    CHECK(s.inputs(1, 0) == 0.0);
    CHECK_THROWS_AS(PosteriorState(x, y, Hyperparameters::from_natural(1.0, Eigen::VectorXd::Ones(1)), 0.0),
                    std::invalid_argument);
}
