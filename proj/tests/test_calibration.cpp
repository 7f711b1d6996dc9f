#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <doctest.h>

#include "calgp/calibration.hpp"
#include "helpers.hpp"

using namespace calgp;

namespace {

struct Fixture {
    Dataset train;
    Dataset cal;
    std::shared_ptr<const PosteriorState> regressor;
};

Fixture make_fixture(Eigen::Index n_train, Eigen::Index n_cal, std::uint64_t seed) {
    Fixture f;
    f.train = testing::heteroscedastic(n_train, seed);
    f.cal = testing::heteroscedastic(n_cal, seed + 1000);
    HyperparameterSearchConfig cfg;
    cfg.restarts = 1;
    cfg.seed = seed;
    const Hyperparameters init = default_hyperparameters(f.train);
    const FittedHyperparameters fit = optimize_hyperparameters(f.train, init, 0.2, cfg);
    f.regressor = std::make_shared<const PosteriorState>(fit_posterior(f.train, fit.theta, fit.noise_std));
    return f;
}

}  // namespace

TEST_CASE("q_lin on a small hand example") {
    const std::vector<double> a{3.0, 1.0, 2.0};
    CHECK(q_lin(0.25, a) == 1.0);
    CHECK(q_lin(0.5, a) == 2.0);
    CHECK(q_lin(0.75, a) == 3.0);
    CHECK(q_lin(0.375, a) == doctest::Approx(1.5));
    CHECK(q_lin(0.1, a) == 1.0);
    CHECK(q_lin(0.0, a) == 1.0);
    CHECK(q_lin(0.9, a) == 3.0);
    CHECK(q_lin(1.0, a) == 3.0);
    CHECK_THROWS_AS(q_lin(0.5, std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(q_lin(1.5, a), std::invalid_argument);
    CHECK_THROWS_AS(q_lin(-0.1, a), std::invalid_argument);
}

TEST_CASE("q_lin agrees with an independent oracle and is monotone") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> size(1, 30);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (int c = 0; c < 300; ++c) {
        std::vector<double> a(static_cast<std::size_t>(size(rng)));
        for (double& v : a) v = normal(rng);
        const double delta = c % 3 == 0 ? static_cast<double>(1 + c % a.size()) / static_cast<double>(a.size() + 1)
                                        : unit(rng);
        CHECK(q_lin(delta, a) == doctest::Approx(testing::q_lin_oracle(delta, a)).epsilon(1e-12));
        const double d2 = std::min(1.0, delta + 0.05 * unit(rng));
        CHECK(q_lin(d2, a) >= q_lin(delta, a));
    }
}

TEST_CASE("q_lin at knots returns order statistics exactly") {
    const std::vector<double> a{0.3, -1.2, 4.4, 2.0, 0.0};
    std::vector<double> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int j = 1; j <= 5; ++j) CHECK(q_lin(j / 6.0, a) == sorted[static_cast<std::size_t>(j - 1)]);
}

TEST_CASE("stable argsort keeps ties in input order") {
    Eigen::VectorXd v(5);
    v << 2.0, 1.0, 2.0, 0.0, 1.0;
    const std::vector<Eigen::Index> order = stable_argsort(v);
    CHECK(order == std::vector<Eigen::Index>{3, 1, 4, 0, 2});
}

TEST_CASE("z-scores reject non-positive widths") {
    CHECK_THROWS_AS(z_scores(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)), std::invalid_argument);
    CHECK_THROWS_AS(z_scores(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3)), std::invalid_argument);
}

TEST_CASE("theorem grid and its thinned version") {
    const std::vector<double> g = theorem_grid(4);
    REQUIRE(g.size() == 4);
    CHECK(g[0] == 0.2);
    CHECK(g[3] == 0.8);
    const std::vector<double> thin = theorem_grid(199, 99);
    CHECK(thin.size() <= 99);
    CHECK(thin.size() >= 90);
    for (std::size_t i = 0; i < thin.size(); ++i) {
        const double j = thin[i] * 200.0;
        CHECK(std::abs(j - std::round(j)) < 1e-9);
        if (i > 0) CHECK(thin[i] > thin[i - 1]);
    }
    CHECK(theorem_grid(50, 99).size() == 50);
}

TEST_CASE("sharpness loss gradient matches central differences") {
    const Fixture f = make_fixture(30, 15, 2);
    const Eigen::VectorXd res = residuals(f.cal, *f.regressor);
    const SharpnessObjective obj(f.regressor->inputs(), f.regressor->noise_std(), f.cal.inputs, res);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 0.4);
    for (double delta : {0.37, 0.81, 0.125, 0.5}) {
        const Eigen::VectorXd p = f.regressor->theta().to_vector() + Eigen::Vector2d(n(rng), n(rng));
        const Hyperparameters t = Hyperparameters::from_vector(p);
        Eigen::VectorXd g;
        const double value = obj.loss_with_gradient(delta, t, g);
        CHECK(value == doctest::Approx(obj.loss(delta, t)).epsilon(1e-12));
        CHECK(value == doctest::Approx(sharpness_loss(delta, t, f.cal, *f.regressor)).epsilon(1e-12));
        for (int i = 0; i < 2; ++i) {
            const double h = 1e-6;
            Eigen::VectorXd pp = p, pm = p;
            pp(i) += h;
            pm(i) -= h;
            const double fd = (obj.loss(delta, Hyperparameters::from_vector(pp)) -
                               obj.loss(delta, Hyperparameters::from_vector(pm))) / (2.0 * h);
            CHECK(g(i) == doctest::Approx(fd).epsilon(1e-5).scale(1e-8));
        }
    }
}

TEST_CASE("sharpness gradient in several dimensions") {
    const Dataset train = testing::smooth(25, 3, 4);
    const Dataset cal = testing::smooth(12, 3, 40);
    const Hyperparameters t0 = Hyperparameters::from_natural(1.0, Eigen::Vector3d(0.8, 1.1, 1.7));
    const PosteriorState reg(train.inputs, train.targets, t0, 0.15);
    const SharpnessObjective obj(train.inputs, 0.15, cal.inputs, residuals(cal, reg));
    const Hyperparameters t = Hyperparameters::from_natural(0.7, Eigen::Vector3d(1.3, 0.6, 2.2));
    Eigen::VectorXd g;
    obj.loss_with_gradient(0.7, t, g);
    REQUIRE(g.size() == 4);
    for (int i = 0; i < 4; ++i) {
        const double h = 1e-6;
        Eigen::VectorXd pp = t.to_vector(), pm = t.to_vector();
        pp(i) += h;
        pm(i) -= h;
        const double fd =
            (obj.loss(0.7, Hyperparameters::from_vector(pp)) - obj.loss(0.7, Hyperparameters::from_vector(pm))) /
            (2.0 * h);
        CHECK(g(i) == doctest::Approx(fd).epsilon(1e-5).scale(1e-8));
    }
}

TEST_CASE("single-level calibration never worsens the loss") {
    const Fixture f = make_fixture(40, 19, 6);
    for (CalibrationMode mode : {CalibrationMode::full, CalibrationMode::line_search}) {
        CalibrationConfig cfg;
        cfg.mode = mode;
        for (double delta : {0.1, 0.5, 0.95}) {
            const CalibrationLevel level = calibrate_single(delta, f.regressor->theta(), f.cal, *f.regressor, cfg);
            const double base = sharpness_loss(delta, f.regressor->theta(), f.cal, *f.regressor);
            CHECK(level.loss <= base);
            CHECK(level.beta == beta_of(delta, level.theta, f.cal, *f.regressor));
            CHECK(level.loss == doctest::Approx(sharpness_loss(delta, level.theta, f.cal, *f.regressor)));
        }
    }
    CHECK_THROWS_AS(calibrate_single(1.0, f.regressor->theta(), f.cal, *f.regressor), std::invalid_argument);
}

TEST_CASE("calibrate_all: exact in-sample coverage, ordering and monotone quantiles") {
    const Fixture f = make_fixture(40, 19, 7);
    const std::vector<double> grid = theorem_grid(f.cal.size());
    const CalibrationModel model = calibrate_all(grid, f.cal, f.regressor);

    const std::vector<Eigen::Index> counts = in_sample_counts(model, f.cal);
    for (std::size_t j = 0; j < counts.size(); ++j) CHECK(counts[j] == static_cast<Eigen::Index>(j + 1));

    const auto& levels = model.levels();
    for (std::size_t j = 1; j < levels.size(); ++j) {
        CHECK(levels[j].beta >= levels[j - 1].beta);
        if (levels[j - 1].beta >= 0.0) CHECK(componentwise_leq(levels[j - 1].theta, levels[j].theta));
        if (levels[j].beta <= 0.0) CHECK(componentwise_leq(levels[j].theta, levels[j - 1].theta));
    }

    Eigen::MatrixXd probes(21, 1);
    for (int i = 0; i < 21; ++i) probes(i, 0) = -2.5 + 0.25 * i;
    Eigen::VectorXd previous = model.quantiles(0.0, probes);
    for (int k = 1; k <= 80; ++k) {
        const Eigen::VectorXd q = model.quantiles(k / 80.0, probes);
        CHECK(((q - previous).array() >= -1e-10).all());
        previous = q;
    }
    CHECK(model.clamp_count() >= 1);

    for (double d : {0.11, 0.43, 0.5, 0.77}) {
        const Eigen::VectorXd x = probes.row(7).transpose();
        CHECK(model.cdf(x, model.quantile(d, x)) == doctest::Approx(d).epsilon(1e-6));
    }
    const auto [lo, hi] = model.delta_range();
    CHECK(lo == grid.front());
    CHECK(hi == grid.back());
}

TEST_CASE("calibrate_all stays near the regressor's loss when ordering binds") {
    // A centre level with beta near zero has an almost flat loss; its theta
    // must not drag the outer levels far above their own optima.
    const Fixture f = make_fixture(150, 59, 17);
    CalibrationConfig cfg;
    cfg.mode = CalibrationMode::line_search;
    const CalibrationModel model = calibrate_all(theorem_grid(59, 19), f.cal, f.regressor, cfg);
    double total = 0.0;
    double reference = 0.0;
    for (const CalibrationLevel& level : model.levels()) {
        const double ref = sharpness_loss(level.delta, f.regressor->theta(), f.cal, *f.regressor);
        CHECK(level.loss <= 1.25 * ref);
        total += level.loss;
        reference += ref;
    }
    CHECK(total <= 1.05 * reference);
}

TEST_CASE("zero-crossing knot sits between the sign change") {
    const Fixture f = make_fixture(40, 19, 8);
    CalibrationConfig cfg;
    cfg.mode = CalibrationMode::line_search;
    const CalibrationModel model = calibrate_all({0.1, 0.3, 0.45, 0.55, 0.7, 0.9}, f.cal, f.regressor, cfg);
    const auto& levels = model.levels();
    if (model.zero_crossing()) {
        const ZeroCrossing& z = *model.zero_crossing();
        CHECK(model.beta_hat(z.delta) == doctest::Approx(0.0).scale(1e-12));
        for (std::size_t j = 0; j + 1 < levels.size(); ++j) {
            if (levels[j].delta < z.delta && levels[j + 1].delta > z.delta) {
                CHECK(z.theta == componentwise_min(levels[j].theta, levels[j + 1].theta));
            }
        }
    }
    CHECK(model.beta_hat(0.0) == levels.front().beta);
    CHECK(model.theta_hat(1.0) == levels.back().theta);
}

TEST_CASE("model construction rejects inconsistent levels") {
    const Fixture f = make_fixture(20, 9, 9);
    const Hyperparameters t = f.regressor->theta();
    CalibrationLevel a{0.3, -0.5, t.scaled(0.2), 0.0, false, false};
    CalibrationLevel b{0.6, 0.4, t, 0.0, false, false};
    CalibrationLevel c{0.8, 0.9, t.scaled(0.1), 0.0, false, false};
    CHECK_NOTHROW(CalibrationModel(f.regressor, {a, b, c}));

    CalibrationLevel c_bad = c;
    c_bad.beta = 0.2;
    CHECK_THROWS_AS(CalibrationModel(f.regressor, {a, b, c_bad}), std::invalid_argument);
    CalibrationLevel c_shrink = c;
    c_shrink.theta = t.scaled(-0.1);
    CHECK_THROWS_AS(CalibrationModel(f.regressor, {a, b, c_shrink}), std::invalid_argument);
    // Below the sign change theta must grow as delta decreases.
    CalibrationLevel a0{0.1, -1.0, t, 0.0, false, false};
    CHECK_THROWS_AS(CalibrationModel(f.regressor, {a0, a, b, c}), std::invalid_argument);
    a0.theta = t.scaled(0.3);
    CHECK_NOTHROW(CalibrationModel(f.regressor, {a0, a, b, c}));
    CHECK_THROWS_AS(CalibrationModel(f.regressor, {b, a, c}), std::invalid_argument);
    CHECK_THROWS_AS(CalibrationModel(f.regressor, {}), std::invalid_argument);
}

TEST_CASE("calibrate_all validates its grid") {
    const Fixture f = make_fixture(20, 9, 10);
    CHECK_THROWS_AS(calibrate_all({}, f.cal, f.regressor), std::invalid_argument);
    CHECK_THROWS_AS(calibrate_all({0.5, 0.4}, f.cal, f.regressor), std::invalid_argument);
    CHECK_THROWS_AS(calibrate_all({0.0, 0.4}, f.cal, f.regressor), std::invalid_argument);
}
