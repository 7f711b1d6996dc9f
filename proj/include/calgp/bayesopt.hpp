#pragma once

// UCB Bayesian optimization with either the vanilla GP band or a calibrated
// width, on the negated 2-D Ackley and Rosenbrock functions.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "calgp/calibration.hpp"
#include "calgp/gp_core.hpp"

namespace calgp {

enum class TestFunction { ackley, rosenbrock };

std::string to_string(TestFunction f);
TestFunction test_function_from_string(const std::string& name);

/// Negated benchmark; maximum 0 at the optimum.
double test_function(TestFunction f, const Eigen::Ref<const Eigen::Vector2d>& x);
double test_function(const std::string& name, const Eigen::Ref<const Eigen::Vector2d>& x);

/// Search box: [-5, 5]^2 for Ackley, [-2, 2]^2 for Rosenbrock.
std::pair<double, double> test_function_bounds(TestFunction f);

enum class AcquisitionKind { calibrated_ucb, vanilla_ucb };

std::string to_string(AcquisitionKind kind);
/// Accepts "calibrated", "vanilla" and the long names.
AcquisitionKind acquisition_kind_from_string(const std::string& name);

struct BayesOptConfig {
    int initial_points = 5;
    /// Initial-design points held out as calibration data.
    int calibration_points = 2;
    int candidates = 2048;
    /// Best grid candidates that are refined by a local pattern search.
    int refine_starts = 4;
    double noise_std = 0.01;
    double calibration_delta = 0.99;
    double vanilla_beta = 2.0;
    double calibrated_scale = 1.0;
    HyperparameterSearchConfig hyperparameters;
    CalibrationConfig calibration;
};

/// Everything the acquisition needs at one step: the regressor on the current
/// data and, for the calibrated kind, the width GP on the same data.
struct AcquisitionState {
    AcquisitionKind kind = AcquisitionKind::vanilla_ucb;
    std::shared_ptr<const PosteriorState> regressor;
    std::shared_ptr<const PosteriorState> width;
    double beta = 2.0;
};

double acquisition(const AcquisitionState& state, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd acquisition_values(const AcquisitionState& state, const Eigen::MatrixXd& points);

/// Quasi-random points (Halton, bases 2 and 3) scaled to [lo, hi]^2.
Eigen::MatrixXd halton_grid(int n, double lo, double hi);

/// Index of the largest value; ties resolve to the first.
Eigen::Index argmax(const Eigen::VectorXd& values);

/// Grid argmax followed by a bounded compass search from the best candidates.
Eigen::Vector2d maximize_acquisition(const AcquisitionState& state, const Eigen::MatrixXd& grid, double lo,
                                     double hi, int refine_starts);

struct BayesOptTrace {
    TestFunction function = TestFunction::ackley;
    AcquisitionKind kind = AcquisitionKind::vanilla_ucb;
    std::uint64_t seed = 0;
    Eigen::MatrixXd initial_design;
    Eigen::VectorXd initial_values;
    /// T x 2, one query per step.
    Eigen::MatrixXd queries;
    /// Noisy observations at the queries.
    Eigen::VectorXd values;
    /// Noise-free function values at the queries.
    Eigen::VectorXd true_values;
    Eigen::VectorXd cumulative_regret;
    Eigen::VectorXd simple_regret;
    Hyperparameters regressor_theta;
    double regressor_noise = 0.0;
    std::optional<Hyperparameters> calibration_theta;
    double beta = 0.0;
    /// Steps where the posterior was degenerate and a random query was used.
    int random_fallbacks = 0;
};

BayesOptTrace run_bayesopt(TestFunction function, AcquisitionKind kind, int budget, std::uint64_t seed,
                           const BayesOptConfig& config = {});

struct RegretSummary {
    TestFunction function = TestFunction::ackley;
    AcquisitionKind kind = AcquisitionKind::vanilla_ucb;
    int seeds = 0;
    int budget = 0;
    /// Mean over seeds, one entry per step.
    Eigen::VectorXd mean_cumulative_regret;
    Eigen::VectorXd mean_simple_regret;
    double final_cumulative_regret = 0.0;
    double final_simple_regret = 0.0;
};

RegretSummary summarize_regret(const std::vector<BayesOptTrace>& traces);

/// Runs seeds base_seed, base_seed + 1, ... in parallel.
std::vector<BayesOptTrace> run_bayesopt_seeds(TestFunction function, AcquisitionKind kind, int budget, int seeds,
                                              std::uint64_t base_seed, const BayesOptConfig& config = {});

void write_trace_csv(const std::string& path, const BayesOptTrace& trace);

}  // namespace calgp
