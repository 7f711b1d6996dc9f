#include <filesystem>
#include <memory>

#include <doctest.h>

#include "calgp/error.hpp"
#include "calgp/serialization.hpp"
#include "helpers.hpp"

using namespace calgp;

namespace {

std::shared_ptr<const PosteriorState> small_regressor(const Dataset& train) {
    return std::make_shared<const PosteriorState>(
        train.inputs, train.targets, Hyperparameters::from_natural(0.9, Eigen::VectorXd::Constant(1, 0.6)), 0.25);
}

}  // namespace

TEST_CASE("calibration model JSON round-trips bit for bit") {
    const Dataset train = testing::heteroscedastic(30, 1);
    const Dataset cal = testing::heteroscedastic(9, 2);
    CalibrationConfig cfg;
    cfg.mode = CalibrationMode::line_search;
    const CalibrationModel model = calibrate_all(theorem_grid(9), cal, small_regressor(train), cfg);
    const Standardization s = Standardization::identity(1);
    const Json j = to_json(model, s);

    const std::string path = (std::filesystem::temp_directory_path() / "calgp_model.json").string();
    write_json(path, j);
    const CalibrationModel back = calibration_model_from_json(read_json(path));
    CHECK(to_json(back, s).dump() == j.dump());
    for (std::size_t i = 0; i < model.levels().size(); ++i) {
        CHECK(back.levels()[i].beta == model.levels()[i].beta);
        CHECK(back.levels()[i].theta == model.levels()[i].theta);
        CHECK(back.levels()[i].delta == model.levels()[i].delta);
    }
    const Eigen::MatrixXd probes = Eigen::MatrixXd::Random(5, 1);
    CHECK(back.quantiles(0.37, probes) == model.quantiles(0.37, probes));

    const LoadedModel loaded = model_from_json(j);
    CHECK(loaded.kind == "calibration");
    CHECK(loaded.model->quantiles(0.5, probes) == model.quantiles(0.5, probes));
}

TEST_CASE("baseline and regressor documents carry their kind") {
    const Dataset train = testing::heteroscedastic(20, 3);
    const Dataset cal = testing::heteroscedastic(7, 4);
    const auto reg = small_regressor(train);
    const BaselineModel rv = fit_baseline(BaselineKind::randomized_scaled, cal, reg, 99);
    Standardization s = Standardization::identity(1);
    s.target_mean = 2.5;
    s.feature_names = {"x"};
    const Json j = to_json(rv, s);
    CHECK(j["kind"] == "baseline");
    CHECK(j["baseline"] == "randomized_scaled");
    const BaselineModel back = baseline_model_from_json(j);
    CHECK(back.seed() == 99);
    CHECK(back.scores() == rv.scores());
    CHECK(to_json(back, s).dump() == j.dump());
    const LoadedModel loaded = model_from_json(j);
    CHECK(loaded.standardization.target_mean == 2.5);
    CHECK(loaded.standardization.feature_names == std::vector<std::string>{"x"});

    const Json r = regressor_document(*reg, s);
    CHECK(model_from_json(r).kind == "regressor");
    CHECK(model_from_json(to_json(GaussianModel(reg), s)).kind == "gaussian");
}

TEST_CASE("malformed documents raise configuration errors") {
    CHECK_THROWS_AS(model_from_json(Json::object()), ConfigError);
    CHECK_THROWS_AS(model_from_json(Json{{"kind", "nn"}}), ConfigError);
    CHECK_THROWS_AS(calibration_model_from_json(Json{{"kind", "calibration"}, {"version", 1}}), ConfigError);
    CHECK_THROWS_AS(calibration_model_from_json(Json{{"kind", "baseline"}, {"version", 1}}), ConfigError);
    CHECK_THROWS_AS(read_json("/nonexistent.json"), ConfigError);
}

TEST_CASE("metrics and regret summaries serialize") {
    MetricsReport m;
    m.ece = 0.01;
    m.observed = {{0.0, 0.0}, {1.0, 1.0}};
    const Json j = to_json(m);
    CHECK(j["kind"] == "metrics");
    CHECK(j["observed"].size() == 2);
    RegretSummary s;
    s.mean_cumulative_regret = Eigen::VectorXd::Ones(3);
    s.mean_simple_regret = Eigen::VectorXd::Zero(3);
    CHECK(to_json(s)["mean_cumulative_regret"].size() == 3);
}
