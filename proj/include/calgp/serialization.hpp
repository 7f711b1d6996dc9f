#pragma once

// JSON envelopes for fitted models, metrics and benchmark results. Doubles are
// written in shortest round-trip form, so loading a saved model reproduces it
// bit for bit.

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "calgp/baselines.hpp"
#include "calgp/bayesopt.hpp"
#include "calgp/calibration.hpp"
#include "calgp/harness.hpp"
#include "calgp/metrics.hpp"

namespace calgp {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

Json to_json(const Hyperparameters& theta);
Hyperparameters hyperparameters_from_json(const Json& j);

Json to_json(const Standardization& s);
Standardization standardization_from_json(const Json& j);

/// Training inputs, targets, theta and noise level; enough to rebuild the posterior.
Json to_json(const PosteriorState& regressor);
std::shared_ptr<const PosteriorState> regressor_from_json(const Json& j);

Json to_json(const CalibrationLevel& level);
CalibrationLevel calibration_level_from_json(const Json& j);

/// Every document carries "kind" and "version"; models also carry the
/// standardization of the data they were trained on.
Json regressor_document(const PosteriorState& regressor, const Standardization& s);
Json to_json(const CalibrationModel& model, const Standardization& s);
Json to_json(const BaselineModel& model, const Standardization& s);
Json to_json(const GaussianModel& model, const Standardization& s);

CalibrationModel calibration_model_from_json(const Json& j);
BaselineModel baseline_model_from_json(const Json& j);

struct LoadedModel {
    std::string kind;
    std::shared_ptr<const QuantileModel> model;
    std::shared_ptr<const PosteriorState> regressor;
    Standardization standardization;
};

/// Dispatches on the "kind" tag. Throws ConfigError for unknown or malformed documents.
LoadedModel model_from_json(const Json& j);

Json to_json(const MetricsReport& report);
Json to_json(const ResultTable& table);
Json to_json(const RegretSummary& summary);

Json read_json(const std::string& path);
/// Writes `j` with a trailing newline; throws ConfigError if the file cannot be opened.
void write_json(const std::string& path, const Json& j);

}  // namespace calgp
