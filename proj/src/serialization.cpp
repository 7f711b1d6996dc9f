#include "calgp/serialization.hpp"

#include <fstream>
#include <sstream>

#include "calgp/error.hpp"

namespace calgp {

namespace {

Json vector_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from(const Json& j) {
    if (!j.is_array()) throw ConfigError("expected a numeric array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError("expected a numeric array");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

Json matrix_json(const Eigen::MatrixXd& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
    return out;
}

Eigen::MatrixXd matrix_from(const Json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("expected a non-empty matrix");
    const Eigen::VectorXd first = vector_from(j[0]);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), first.size());
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Eigen::VectorXd row = vector_from(j[r]);
        if (row.size() != first.size()) throw ConfigError("ragged matrix");
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

void check_kind(const Json& j, const std::string& kind) {
    if (!j.is_object() || j.value("kind", std::string()) != kind) {
        throw ConfigError("expected a '" + kind + "' document");
    }
    if (j.value("version", 0) != kFormatVersion) throw ConfigError("unsupported format version");
}

Json envelope(const std::string& kind) {
    Json j;
    j["kind"] = kind;
    j["version"] = kFormatVersion;
    return j;
}

Json curve_json(const std::vector<std::pair<double, double>>& curve) {
    Json out = Json::array();
    for (const auto& [p, observed] : curve) out.push_back({{"expected", p}, {"observed", observed}});
    return out;
}

Json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

Json to_json(const Hyperparameters& theta) {
    return {{"log_amplitude", theta.log_amplitude}, {"log_inv_lengthscales", vector_json(theta.log_inv_lengthscales)}};
}

Hyperparameters hyperparameters_from_json(const Json& j) {
    try {
        return {j.at("log_amplitude").get<double>(), vector_from(j.at("log_inv_lengthscales"))};
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed hyperparameters: ") + e.what());
    }
}

Json to_json(const Standardization& s) {
    return {{"feature_means", vector_json(s.feature_means)},
            {"feature_stds", vector_json(s.feature_stds)},
            {"target_mean", s.target_mean},
            {"target_std", s.target_std},
            {"feature_names", s.feature_names},
            {"target_name", s.target_name}};
}

Standardization standardization_from_json(const Json& j) {
    try {
        Standardization s;
        s.feature_means = vector_from(j.at("feature_means"));
        s.feature_stds = vector_from(j.at("feature_stds"));
        s.target_mean = j.at("target_mean").get<double>();
        s.target_std = j.at("target_std").get<double>();
        s.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        s.target_name = j.at("target_name").get<std::string>();
        return s;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed standardization: ") + e.what());
    }
}

Json to_json(const PosteriorState& regressor) {
    return {{"theta", to_json(regressor.theta())},
            {"noise_std", regressor.noise_std()},
            {"inputs", matrix_json(regressor.inputs())},
            {"targets", vector_json(regressor.targets())}};
}

std::shared_ptr<const PosteriorState> regressor_from_json(const Json& j) {
    try {
        return std::make_shared<const PosteriorState>(matrix_from(j.at("inputs")), vector_from(j.at("targets")),
                                                      hyperparameters_from_json(j.at("theta")),
                                                      j.at("noise_std").get<double>());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed regressor: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid regressor: ") + e.what());
    }
}

Json to_json(const CalibrationLevel& level) {
    return {{"delta", level.delta},
            {"beta", level.beta},
            {"theta", to_json(level.theta)},
            {"loss", level.loss},
            {"warning", level.warning},
            {"reused_neighbour", level.reused_neighbour}};
}

CalibrationLevel calibration_level_from_json(const Json& j) {
    try {
        CalibrationLevel level;
        level.delta = j.at("delta").get<double>();
        level.beta = j.at("beta").get<double>();
        level.theta = hyperparameters_from_json(j.at("theta"));
        level.loss = j.at("loss").get<double>();
        level.warning = j.at("warning").get<bool>();
        level.reused_neighbour = j.at("reused_neighbour").get<bool>();
        return level;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed calibration level: ") + e.what());
    }
}

Json regressor_document(const PosteriorState& regressor, const Standardization& s) {
    Json j = envelope("regressor");
    j["standardization"] = to_json(s);
    j["regressor"] = to_json(regressor);
    return j;
}

Json to_json(const CalibrationModel& model, const Standardization& s) {
    Json j = envelope("calibration");
    j["standardization"] = to_json(s);
    j["regressor"] = to_json(model.regressor());
    Json levels = Json::array();
    for (const CalibrationLevel& level : model.levels()) levels.push_back(to_json(level));
    j["levels"] = std::move(levels);
    j["cal_residuals"] = vector_json(model.cal_residuals());
    return j;
}

Json to_json(const BaselineModel& model, const Standardization& s) {
    Json j = envelope("baseline");
    j["baseline"] = to_string(model.kind());
    j["standardization"] = to_json(s);
    j["regressor"] = to_json(model.regressor());
    j["scores"] = vector_json(model.scores());
    j["seed"] = model.seed();
    return j;
}

Json to_json(const GaussianModel& model, const Standardization& s) {
    Json j = envelope("gaussian");
    j["standardization"] = to_json(s);
    j["regressor"] = to_json(model.regressor());
    return j;
}

CalibrationModel calibration_model_from_json(const Json& j) {
    check_kind(j, "calibration");
    try {
        std::vector<CalibrationLevel> levels;
        for (const Json& level : j.at("levels")) levels.push_back(calibration_level_from_json(level));
        Eigen::VectorXd residuals;
        if (j.contains("cal_residuals") && !j["cal_residuals"].empty()) residuals = vector_from(j["cal_residuals"]);
        return CalibrationModel(regressor_from_json(j.at("regressor")), std::move(levels), std::move(residuals));
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed calibration model: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid calibration model: ") + e.what());
    }
}

BaselineModel baseline_model_from_json(const Json& j) {
    check_kind(j, "baseline");
    try {
        return BaselineModel(baseline_kind_from_string(j.at("baseline").get<std::string>()),
                             regressor_from_json(j.at("regressor")), vector_from(j.at("scores")),
                             j.at("seed").get<std::uint64_t>());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed baseline model: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid baseline model: ") + e.what());
    }
}

LoadedModel model_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("kind")) throw ConfigError("model document has no kind tag");
    LoadedModel out;
    out.kind = j["kind"].get<std::string>();
    if (out.kind == "calibration") {
        auto model = std::make_shared<const CalibrationModel>(calibration_model_from_json(j));
        out.regressor = model->regressor_ptr();
        out.model = std::move(model);
    } else if (out.kind == "baseline") {
        auto model = std::make_shared<const BaselineModel>(baseline_model_from_json(j));
        out.regressor = model->regressor_ptr();
        out.model = std::move(model);
    } else if (out.kind == "gaussian" || out.kind == "regressor") {
        check_kind(j, out.kind);
        out.regressor = regressor_from_json(j.at("regressor"));
        out.model = std::make_shared<const GaussianModel>(out.regressor);
    } else {
        throw ConfigError("unknown model kind '" + out.kind + "'");
    }
    out.standardization = standardization_from_json(j.at("standardization"));
    return out;
}

Json to_json(const MetricsReport& report) {
    Json j = envelope("metrics");
    j["ece"] = report.ece;
    j["observed"] = curve_json(report.observed);
    j["avg_std"] = report.avg_std;
    j["nll"] = report.nll;
    j["ci95_width"] = report.ci95_width;
    j["nll_floored_points"] = report.floored_points;
    return j;
}

Json to_json(const ResultTable& table) {
    Json j = envelope("result_table");
    Json cells = Json::array();
    for (const ResultCell& c : table.cells) {
        cells.push_back({{"dataset", c.dataset},
                         {"method", to_string(c.method)},
                         {"ece", summary_json(c.ece)},
                         {"avg_std", summary_json(c.avg_std)},
                         {"nll", summary_json(c.nll)},
                         {"ci95_width", summary_json(c.ci95_width)},
                         {"warnings", c.warnings},
                         {"observed", curve_json(c.observed)}});
    }
    j["cells"] = std::move(cells);
    Json reps = Json::array();
    for (const RepetitionResult& r : table.repetitions) {
        Json methods = Json::object();
        for (const auto& [method, m] : r.metrics) {
            methods[to_string(method)] = {{"ece", m.ece},
                                          {"avg_std", m.avg_std},
                                          {"nll", m.nll},
                                          {"ci95_width", m.ci95_width},
                                          {"warnings", r.warnings.at(method)}};
        }
        reps.push_back({{"index", r.index},
                        {"seed", r.seed},
                        {"regressor_theta", to_json(r.regressor_theta)},
                        {"regressor_noise", r.regressor_noise},
                        {"methods", std::move(methods)}});
    }
    j["repetitions"] = std::move(reps);
    return j;
}

Json to_json(const RegretSummary& s) {
    Json j = envelope("regret_summary");
    j["function"] = to_string(s.function);
    j["acquisition"] = to_string(s.kind);
    j["seeds"] = s.seeds;
    j["budget"] = s.budget;
    j["final_cumulative_regret"] = s.final_cumulative_regret;
    j["final_simple_regret"] = s.final_simple_regret;
    j["mean_cumulative_regret"] = vector_json(s.mean_cumulative_regret);
    j["mean_simple_regret"] = vector_json(s.mean_simple_regret);
    return j;
}

Json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

}  // namespace calgp
