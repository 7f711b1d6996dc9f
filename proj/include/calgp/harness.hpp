#pragma once

// Dataset ingestion, seeded train/calibration/test splitting and the repeated
// benchmark protocol.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "calgp/calibration.hpp"
#include "calgp/gp_core.hpp"
#include "calgp/metrics.hpp"

namespace calgp {

/// Affine maps fitted on the training split.
struct Standardization {
    Eigen::VectorXd feature_means;
    Eigen::VectorXd feature_stds;
    double target_mean = 0.0;
    double target_std = 1.0;
    std::vector<std::string> feature_names;
    std::string target_name;

    static Standardization fit(const Dataset& raw);
    /// Standardizes raw data and records the maps on the result.
    Dataset apply(const Dataset& raw) const;
    static Standardization identity(Eigen::Index dim);
    static Standardization of(const Dataset& data);
};

/// Reads a numeric CSV with a header row. The target is the named column, or
/// the last one. Constant feature columns are dropped and reported in
/// `warnings`. Throws ConfigError naming row and column for bad cells.
Dataset load_csv(const std::string& path, const std::optional<std::string>& target = std::nullopt,
                 std::vector<std::string>* warnings = nullptr);

struct SplitFractions {
    double train = 0.6;
    double cal = 0.2;
    double test = 0.2;

    /// Throws ConfigError unless all are positive and sum to 1 within 1e-9.
    void validate() const;
};

/// "0.6,0.2,0.2" -> fractions.
SplitFractions parse_split(const std::string& text);

struct SplitIndices {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> cal;
    std::vector<Eigen::Index> test;
};

/// Calibration and test sizes are floor(f * n); the remainder goes to training.
SplitIndices split_indices(Eigen::Index n, const SplitFractions& fractions, std::uint64_t seed);

struct Splits {
    Dataset train;
    Dataset cal;
    Dataset test;
    SplitIndices indices;
    Standardization standardization;
};

Splits split_and_standardize(const Dataset& raw, const SplitFractions& fractions, std::uint64_t seed);

enum class Method { ours, rk, rv, rm, base };

std::string to_string(Method method);
Method method_from_string(const std::string& name);
/// "ours,rk" -> methods, keeping order and dropping duplicates.
std::vector<Method> parse_methods(const std::string& text);

struct ExperimentConfig {
    std::string dataset_path;
    std::string dataset_name;
    std::optional<std::string> target;
    SplitFractions fractions;
    int repetitions = 20;
    std::uint64_t seed = 0;
    std::vector<Method> methods{Method::ours, Method::rk, Method::rv, Method::rm, Method::base};
    HyperparameterSearchConfig hyperparameters;
    CalibrationConfig calibration;
    /// Explicit levels for `ours`; by default the theorem grid, thinned to grid_cap.
    std::optional<std::vector<double>> delta_grid;
    std::size_t grid_cap = 99;
    SharpnessOptions sharpness;
    std::size_t reliability_levels = 21;
    /// Quantile bands are kept for this many leading repetitions.
    int band_repetitions = 1;

    /// Throws ConfigError on invalid settings.
    void validate() const;
};

/// Test inputs (standardized), targets, mean and quantiles at band_levels().
struct QuantileBand {
    Eigen::MatrixXd inputs;
    Eigen::VectorXd targets;
    Eigen::VectorXd mean;
    Eigen::MatrixXd quantiles;
};

const std::vector<double>& band_levels();

struct RepetitionResult {
    int index = 0;
    std::uint64_t seed = 0;
    Hyperparameters regressor_theta;
    double regressor_noise = 0.0;
    std::map<Method, MetricsReport> metrics;
    std::map<Method, int> warnings;
    std::map<Method, QuantileBand> bands;
};

struct Summary {
    double mean = 0.0;
    double std = 0.0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for n = 1).
Summary summarize(const std::vector<double>& values);

struct ResultCell {
    std::string dataset;
    Method method = Method::ours;
    Summary ece;
    Summary avg_std;
    Summary nll;
    Summary ci95_width;
    int warnings = 0;
    /// Reliability curve averaged over repetitions.
    std::vector<std::pair<double, double>> observed;
};

struct ResultTable {
    std::vector<ResultCell> cells;
    std::vector<RepetitionResult> repetitions;

    const ResultCell& cell(const std::string& dataset, Method method) const;
};

/// Aggregates repetitions into one cell per method.
ResultTable aggregate(const std::string& dataset, const std::vector<Method>& methods,
                      std::vector<RepetitionResult> repetitions);

/// One repetition of the protocol on already split data.
RepetitionResult run_repetition(const ExperimentConfig& config, const Splits& splits, int index,
                                std::uint64_t seed);

ResultTable run_experiment(const ExperimentConfig& config);
ResultTable run_experiment(const ExperimentConfig& config, const Dataset& raw);

void write_reliability_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve);
/// Values are in standardized units, like every reported metric.
void write_band_csv(const std::string& path, const QuantileBand& band, const std::vector<std::string>& feature_names);

}  // namespace calgp
