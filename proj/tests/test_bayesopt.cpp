#include <cmath>
#include <numbers>

#include <doctest.h>

#include "calgp/bayesopt.hpp"
#include "calgp/error.hpp"

using namespace calgp;

namespace {

double ackley_textbook(double x, double y) {
    const double a = -20.0 * std::exp(-0.2 * std::sqrt(0.5 * (x * x + y * y)));
    const double b = -std::exp(0.5 * (std::cos(2.0 * std::numbers::pi * x) + std::cos(2.0 * std::numbers::pi * y)));
    return -(a + b + std::numbers::e + 20.0);
}

void check_regret_bookkeeping(const BayesOptTrace& t) {
    double best = -1e300;
    for (Eigen::Index i = 0; i < t.true_values.size(); ++i) {
        const double step = i == 0 ? t.cumulative_regret(0) : t.cumulative_regret(i) - t.cumulative_regret(i - 1);
        CHECK(step == doctest::Approx(-t.true_values(i)).epsilon(1e-12).scale(1e-12));
        CHECK(step >= -1e-12);
        best = std::max(best, t.true_values(i));
        CHECK(t.simple_regret(i) == -best);
        if (i > 0) CHECK(t.simple_regret(i) <= t.simple_regret(i - 1));
    }
}

}  // namespace

TEST_CASE("test functions at their optima and against a textbook formula") {
    CHECK(test_function(TestFunction::ackley, Eigen::Vector2d(0.0, 0.0)) == 0.0);
    CHECK(test_function(TestFunction::rosenbrock, Eigen::Vector2d(1.0, 1.0)) == 0.0);
    CHECK(test_function("ackley", Eigen::Vector2d(1.0, 1.0)) == doctest::Approx(ackley_textbook(1.0, 1.0)).epsilon(1e-14));
    CHECK(test_function("ackley", Eigen::Vector2d(-2.3, 0.7)) ==
          doctest::Approx(ackley_textbook(-2.3, 0.7)).epsilon(1e-14));
    CHECK(test_function("rosenbrock", Eigen::Vector2d(0.0, 0.0)) == -1.0);
    CHECK(test_function(TestFunction::ackley, Eigen::Vector2d(1.0, 1.0)) < 0.0);
    CHECK_THROWS_AS(test_function("sphere", Eigen::Vector2d(0.0, 0.0)), ConfigError);
}

TEST_CASE("acquisition composition") {
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 1, 0, 0, 1, -1, -1;
    Eigen::VectorXd y(4);
    y << 0.5, -0.2, 0.1, 0.9;
    const Hyperparameters t = Hyperparameters::from_natural(1.0, Eigen::Vector2d(0.8, 0.8));
    AcquisitionState vanilla;
    vanilla.regressor = std::make_shared<const PosteriorState>(x, y, t, 0.05);
    vanilla.beta = 2.0;
    const Eigen::Vector2d probe(0.3, -0.4);
    CHECK(acquisition(vanilla, probe) ==
          doctest::Approx(vanilla.regressor->mean(probe) + 2.0 * vanilla.regressor->stddev(probe)).epsilon(1e-14));

    AcquisitionState calibrated = vanilla;
    calibrated.kind = AcquisitionKind::calibrated_ucb;
    calibrated.width = std::make_shared<const PosteriorState>(x, Eigen::VectorXd::Zero(4), t.scaled(-0.5), 0.05);
    calibrated.beta = 1.3;
    CHECK(acquisition(calibrated, probe) ==
          doctest::Approx(vanilla.regressor->mean(probe) + 1.3 * calibrated.width->stddev(probe)).epsilon(1e-14));

    for (AcquisitionState* s : {&vanilla, &calibrated}) {
        s->beta = 0.0;
        CHECK(acquisition(*s, probe) == vanilla.regressor->mean(probe));
    }
}

TEST_CASE("candidate grid and argmax") {
    const Eigen::MatrixXd g = halton_grid(64, -5.0, 5.0);
    CHECK(g.minCoeff() >= -5.0);
    CHECK(g.maxCoeff() <= 5.0);
    CHECK(g(0, 0) == 0.0);
    CHECK(g(0, 1) == doctest::Approx(-5.0 + 10.0 / 3.0));
    Eigen::VectorXd v(5);
    v << 0.1, 0.7, -0.2, 0.7, 0.3;
    CHECK(argmax(v) == 1);
    CHECK(argmax((v.array() + 123.4).matrix()) == 1);
}

TEST_CASE("short optimization runs: lengths, determinism, bookkeeping") {
    BayesOptConfig cfg;
    cfg.candidates = 256;
    cfg.hyperparameters.restarts = 1;
    for (AcquisitionKind kind : {AcquisitionKind::vanilla_ucb, AcquisitionKind::calibrated_ucb}) {
        const BayesOptTrace one = run_bayesopt(TestFunction::ackley, kind, 1, 3, cfg);
        CHECK(one.queries.rows() == 1);
        CHECK(one.cumulative_regret.size() == 1);
        CHECK(one.simple_regret.size() == 1);
        CHECK(one.initial_design.rows() == 5);

        const BayesOptTrace a = run_bayesopt(TestFunction::rosenbrock, kind, 6, 11, cfg);
        const BayesOptTrace b = run_bayesopt(TestFunction::rosenbrock, kind, 6, 11, cfg);
        CHECK(a.queries == b.queries);
        CHECK(a.values == b.values);
        check_regret_bookkeeping(a);
        CHECK(a.queries.minCoeff() >= -2.0);
        CHECK(a.queries.maxCoeff() <= 2.0);
        if (kind == AcquisitionKind::calibrated_ucb) CHECK(a.calibration_theta.has_value());
    }
    // Both kinds share the initial design for a given seed.
    CHECK(run_bayesopt(TestFunction::ackley, AcquisitionKind::vanilla_ucb, 1, 4, cfg).initial_design ==
          run_bayesopt(TestFunction::ackley, AcquisitionKind::calibrated_ucb, 1, 4, cfg).initial_design);
    CHECK_THROWS_AS(run_bayesopt(TestFunction::ackley, AcquisitionKind::vanilla_ucb, 0, 1, cfg), ConfigError);
}

TEST_CASE("regret summary averages over seeds") {
    BayesOptConfig cfg;
    cfg.candidates = 128;
    cfg.hyperparameters.restarts = 1;
    const auto traces = run_bayesopt_seeds(TestFunction::ackley, AcquisitionKind::vanilla_ucb, 3, 2, 7, cfg);
    const RegretSummary s = summarize_regret(traces);
    CHECK(s.seeds == 2);
    CHECK(s.final_cumulative_regret ==
          doctest::Approx(0.5 * (traces[0].cumulative_regret(2) + traces[1].cumulative_regret(2))));
    CHECK(traces[1].seed == 8);
}
