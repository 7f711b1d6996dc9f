#include "calgp/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "calgp/error.hpp"
#include "calgp/parallel.hpp"
#include "calgp/seed.hpp"

namespace calgp {

std::string to_string(TestFunction f) {
    switch (f) {
        case TestFunction::ackley: return "ackley";
        case TestFunction::rosenbrock: return "rosenbrock";
    }
    throw std::invalid_argument("unknown test function");
}

TestFunction test_function_from_string(const std::string& name) {
    if (name == "ackley") return TestFunction::ackley;
    if (name == "rosenbrock") return TestFunction::rosenbrock;
    throw ConfigError("unknown test function '" + name + "' (expected ackley or rosenbrock)");
}

double test_function(TestFunction f, const Eigen::Ref<const Eigen::Vector2d>& x) {
    switch (f) {
        case TestFunction::ackley: {
            const double r = std::sqrt(0.5 * x.squaredNorm());
            const double c = 0.5 * (std::cos(2.0 * std::numbers::pi * x(0)) + std::cos(2.0 * std::numbers::pi * x(1)));
            return -(20.0 * (1.0 - std::exp(-0.2 * r)) + (std::exp(1.0) - std::exp(c)));
        }
        case TestFunction::rosenbrock: {
            const double a = 1.0 - x(0);
            const double b = x(1) - x(0) * x(0);
            return -(a * a + 100.0 * b * b);
        }
    }
    throw std::invalid_argument("unknown test function");
}

double test_function(const std::string& name, const Eigen::Ref<const Eigen::Vector2d>& x) {
    return test_function(test_function_from_string(name), x);
}

std::pair<double, double> test_function_bounds(TestFunction f) {
    return f == TestFunction::ackley ? std::pair{-5.0, 5.0} : std::pair{-2.0, 2.0};
}

std::string to_string(AcquisitionKind kind) {
    return kind == AcquisitionKind::calibrated_ucb ? "calibrated_ucb" : "vanilla_ucb";
}

AcquisitionKind acquisition_kind_from_string(const std::string& name) {
    if (name == "calibrated" || name == "calibrated_ucb") return AcquisitionKind::calibrated_ucb;
    if (name == "vanilla" || name == "vanilla_ucb") return AcquisitionKind::vanilla_ucb;
    throw ConfigError("unknown acquisition kind '" + name + "' (expected calibrated or vanilla)");
}

Eigen::VectorXd acquisition_values(const AcquisitionState& state, const Eigen::MatrixXd& points) {
    const PosteriorState& width = state.kind == AcquisitionKind::calibrated_ucb ? *state.width : *state.regressor;
    return state.regressor->means(points) + state.beta * width.stddevs(points);
}

double acquisition(const AcquisitionState& state, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return acquisition_values(state, Eigen::MatrixXd(x.transpose()))(0);
}

namespace {

double radical_inverse(std::uint64_t i, std::uint64_t base) {
    double result = 0.0;
    double f = 1.0 / static_cast<double>(base);
    while (i > 0) {
        result += f * static_cast<double>(i % base);
        i /= base;
        f /= static_cast<double>(base);
    }
    return result;
}

}  // namespace

Eigen::MatrixXd halton_grid(int n, double lo, double hi) {
    Eigen::MatrixXd grid(n, 2);
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::uint64_t>(i + 1);
        grid(i, 0) = lo + (hi - lo) * radical_inverse(k, 2);
        grid(i, 1) = lo + (hi - lo) * radical_inverse(k, 3);
    }
    return grid;
}

Eigen::Index argmax(const Eigen::VectorXd& values) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i) {
        if (values(i) > values(best)) best = i;
    }
    return best;
}

Eigen::Vector2d maximize_acquisition(const AcquisitionState& state, const Eigen::MatrixXd& grid, double lo,
                                     double hi, int refine_starts) {
    const Eigen::VectorXd values = acquisition_values(state, grid);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto starts = std::min<std::size_t>(static_cast<std::size_t>(std::max(refine_starts, 1)), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(starts), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                          return values(a) > values(b) || (values(a) == values(b) && a < b);
                      });

    Eigen::Vector2d best = grid.row(order[0]).transpose();
    double best_value = values(order[0]);
    const Eigen::Vector2d directions[4] = {{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}};
    for (std::size_t s = 0; s < starts; ++s) {
        Eigen::Vector2d x = grid.row(order[s]).transpose();
        double fx = values(order[s]);
        double step = 0.05 * (hi - lo);
        while (step > 1e-4 * (hi - lo)) {
            bool moved = false;
            for (const Eigen::Vector2d& d : directions) {
                const Eigen::Vector2d y = (x + step * d).cwiseMax(lo).cwiseMin(hi);
                const double fy = acquisition(state, y);
                if (fy > fx) {
                    x = y;
                    fx = fy;
                    moved = true;
                }
            }
            if (!moved) step *= 0.5;
        }
        if (fx > best_value) {
            best = x;
            best_value = fx;
        }
    }
    return best;
}

BayesOptTrace run_bayesopt(TestFunction function, AcquisitionKind kind, int budget, std::uint64_t seed,
                           const BayesOptConfig& config) {
    if (budget < 1) throw ConfigError("budget must be at least 1");
    if (config.initial_points < 3) throw ConfigError("need at least three initial points");
    if (kind == AcquisitionKind::calibrated_ucb &&
        (config.calibration_points < 1 || config.calibration_points >= config.initial_points)) {
        throw ConfigError("calibration points must leave at least one training point");
    }
    const auto [lo, hi] = test_function_bounds(function);
    std::mt19937_64 design_rng(derive_seed(seed, 1));
    std::mt19937_64 noise_rng(derive_seed(seed, 2));
    std::mt19937_64 fallback_rng(derive_seed(seed, 3));
    std::uniform_real_distribution<double> uniform(lo, hi);
    std::normal_distribution<double> noise(0.0, config.noise_std);

    BayesOptTrace trace;
    trace.function = function;
    trace.kind = kind;
    trace.seed = seed;

    const int n0 = config.initial_points;
    const int total = n0 + budget;
    Eigen::MatrixXd x(total, 2);
    Eigen::VectorXd y(total);
    for (int i = 0; i < n0; ++i) {
        x(i, 0) = uniform(design_rng);
        x(i, 1) = uniform(design_rng);
        y(i) = test_function(function, x.row(i).transpose()) + noise(noise_rng);
    }
    trace.initial_design = x.topRows(n0);
    trace.initial_values = y.head(n0);

    // Targets are standardized with the initial-design statistics, which are then frozen.
    Dataset design = Dataset::from_arrays(x.topRows(n0), y.head(n0));
    const double y_mean = design.targets.mean();
    double y_std = std::sqrt((design.targets.array() - y_mean).square().sum() / (n0 - 1));
    if (!(y_std > 0.0)) y_std = 1.0;
    design.targets = ((design.targets.array() - y_mean) / y_std).matrix();

    HyperparameterSearchConfig hyper = config.hyperparameters;
    hyper.seed = derive_seed(seed, 4);
    const Hyperparameters init = default_hyperparameters(design);
    const FittedHyperparameters fit = optimize_hyperparameters(design, init, 0.1 * init.amplitude(), hyper);
    trace.regressor_theta = fit.theta;
    trace.regressor_noise = fit.noise_std;

    Hyperparameters width_theta = fit.theta;
    double beta = config.vanilla_beta;
    if (kind == AcquisitionKind::calibrated_ucb) {
        const int n_fit = n0 - config.calibration_points;
        std::vector<Eigen::Index> fit_rows(static_cast<std::size_t>(n_fit));
        std::vector<Eigen::Index> cal_rows(static_cast<std::size_t>(config.calibration_points));
        std::iota(fit_rows.begin(), fit_rows.end(), Eigen::Index{0});
        std::iota(cal_rows.begin(), cal_rows.end(), Eigen::Index{n_fit});
        const Dataset fit_part = design.subset(fit_rows);
        const Dataset cal_part = design.subset(cal_rows);
        const PosteriorState reg(fit_part.inputs, fit_part.targets, fit.theta, fit.noise_std);
        const CalibrationLevel level =
            calibrate_single(config.calibration_delta, fit.theta, cal_part, reg, config.calibration);
        width_theta = level.theta;
        beta = config.calibrated_scale * level.beta;
        trace.calibration_theta = level.theta;
    }
    trace.beta = beta;

    const Eigen::MatrixXd grid = halton_grid(config.candidates, lo, hi);
    Eigen::VectorXd z = design.targets;
    z.conservativeResize(total);
    trace.queries.resize(budget, 2);
    trace.values.resize(budget);
    trace.true_values.resize(budget);
    for (int t = 0; t < budget; ++t) {
        const int n = n0 + t;
        Eigen::Vector2d query;
        try {
            AcquisitionState state;
            state.kind = kind;
            state.beta = beta;
            state.regressor = std::make_shared<const PosteriorState>(x.topRows(n), z.head(n), fit.theta, fit.noise_std);
            if (kind == AcquisitionKind::calibrated_ucb) {
                state.width = std::make_shared<const PosteriorState>(x.topRows(n), Eigen::VectorXd::Zero(n),
                                                                     width_theta, fit.noise_std);
            }
            query = maximize_acquisition(state, grid, lo, hi, config.refine_starts);
        } catch (const NumericalError&) {
            query = {uniform(fallback_rng), uniform(fallback_rng)};
            ++trace.random_fallbacks;
        }
        const double f = test_function(function, query);
        x.row(n) = query.transpose();
        y(n) = f + noise(noise_rng);
        z(n) = (y(n) - y_mean) / y_std;
        trace.queries.row(t) = query.transpose();
        trace.values(t) = y(n);
        trace.true_values(t) = f;
    }

    constexpr double optimum = 0.0;
    trace.cumulative_regret.resize(budget);
    trace.simple_regret.resize(budget);
    double cumulative = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < budget; ++t) {
        cumulative += optimum - trace.true_values(t);
        best = std::max(best, trace.true_values(t));
        trace.cumulative_regret(t) = cumulative;
        trace.simple_regret(t) = optimum - best;
    }
    return trace;
}

std::vector<BayesOptTrace> run_bayesopt_seeds(TestFunction function, AcquisitionKind kind, int budget, int seeds,
                                              std::uint64_t base_seed, const BayesOptConfig& config) {
    if (seeds < 1) throw ConfigError("need at least one seed");
    std::vector<BayesOptTrace> traces(static_cast<std::size_t>(seeds));
    parallel_for(traces.size(), [&](std::size_t s) {
        traces[s] = run_bayesopt(function, kind, budget, base_seed + s, config);
    });
    return traces;
}

RegretSummary summarize_regret(const std::vector<BayesOptTrace>& traces) {
    if (traces.empty()) throw std::invalid_argument("summarize_regret: no traces");
    RegretSummary s;
    s.function = traces.front().function;
    s.kind = traces.front().kind;
    s.seeds = static_cast<int>(traces.size());
    s.budget = static_cast<int>(traces.front().cumulative_regret.size());
    s.mean_cumulative_regret = Eigen::VectorXd::Zero(s.budget);
    s.mean_simple_regret = Eigen::VectorXd::Zero(s.budget);
    for (const BayesOptTrace& t : traces) {
        if (t.cumulative_regret.size() != s.budget) throw std::invalid_argument("summarize_regret: budgets differ");
        s.mean_cumulative_regret += t.cumulative_regret;
        s.mean_simple_regret += t.simple_regret;
    }
    s.mean_cumulative_regret /= static_cast<double>(traces.size());
    s.mean_simple_regret /= static_cast<double>(traces.size());
    s.final_cumulative_regret = s.mean_cumulative_regret(s.budget - 1);
    s.final_simple_regret = s.mean_simple_regret(s.budget - 1);
    return s;
}

void write_trace_csv(const std::string& path, const BayesOptTrace& trace) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << std::setprecision(17);
    out << "step,x0,x1,observed,value,cumulative_regret,simple_regret\n";
    for (Eigen::Index t = 0; t < trace.queries.rows(); ++t) {
        out << t + 1 << ',' << trace.queries(t, 0) << ',' << trace.queries(t, 1) << ',' << trace.values(t) << ','
            << trace.true_values(t) << ',' << trace.cumulative_regret(t) << ',' << trace.simple_regret(t) << '\n';
    }
}

}  // namespace calgp
