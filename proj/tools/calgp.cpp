// calgp: fit, calibrate, evaluate and benchmark calibrated GP regressors, and
// run the calibrated-UCB optimization experiments.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calgp/baselines.hpp"
#include "calgp/bayesopt.hpp"
#include "calgp/calibration.hpp"
#include "calgp/error.hpp"
#include "calgp/harness.hpp"
#include "calgp/metrics.hpp"
#include "calgp/seed.hpp"
#include "calgp/serialization.hpp"

namespace fs = std::filesystem;
using namespace calgp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOptions {
    std::string dataset;
    std::string target;
    std::string split = "0.6,0.2,0.2";
    int reps = 20;
    std::uint64_t seed = 0;
    std::string methods = "ours,rk,rv,rm,base";
    std::string delta_grid = "theorem";
    Eigen::Index subset_cap = 0;
    std::string out_dir = ".";
    std::string mode = "full";
    std::string model;
    int restarts = 5;
    std::size_t nll_points = 0;
    std::size_t grid_cap = 99;
};

struct BayesOptOptions {
    std::string function = "ackley";
    std::string kind = "both";
    int budget = 100;
    int seeds = 10;
};

std::optional<std::string> optional_target(const CommonOptions& o) {
    if (o.target.empty()) return std::nullopt;
    return o.target;
}

CalibrationConfig calibration_config(const CommonOptions& o) {
    CalibrationConfig c;
    if (o.mode == "full") {
        c.mode = CalibrationMode::full;
    } else if (o.mode == "line-search") {
        c.mode = CalibrationMode::line_search;
    } else {
        throw ConfigError("--mode must be full or line-search");
    }
    if (o.subset_cap < 0) throw ConfigError("--subset-cap must be positive");
    if (o.subset_cap > 0) c.subset_cap = o.subset_cap;
    return c;
}

/// "theorem" keeps the default grid; a single integer caps it; otherwise a
/// comma-separated list of levels.
void apply_delta_grid(const std::string& text, ExperimentConfig& config) {
    if (text.empty() || text == "theorem") return;
    if (text.find(',') == std::string::npos && text.find('.') == std::string::npos) {
        try {
            const long cap = std::stol(text);
            if (cap < 1) throw ConfigError("--delta-grid cap must be positive");
            config.grid_cap = static_cast<std::size_t>(cap);
            return;
        } catch (const std::logic_error&) {
            throw ConfigError("cannot parse --delta-grid '" + text + "'");
        }
    }
    std::vector<double> grid;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            grid.push_back(std::stod(item));
        } catch (const std::logic_error&) {
            throw ConfigError("cannot parse --delta-grid entry '" + item + "'");
        }
    }
    config.delta_grid = std::move(grid);
}

ExperimentConfig experiment_config(const CommonOptions& o) {
    if (o.dataset.empty()) throw ConfigError("--dataset is required");
    ExperimentConfig c;
    c.dataset_path = o.dataset;
    c.target = optional_target(o);
    c.fractions = parse_split(o.split);
    c.repetitions = o.reps;
    c.seed = o.seed;
    c.methods = parse_methods(o.methods);
    c.calibration = calibration_config(o);
    c.hyperparameters.restarts = o.restarts;
    c.sharpness.nll_max_points = o.nll_points;
    c.grid_cap = o.grid_cap;
    apply_delta_grid(o.delta_grid, c);
    c.validate();
    return c;
}

fs::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

Splits load_splits(const CommonOptions& o, const ExperimentConfig& c) {
    std::vector<std::string> warnings;
    const Dataset raw = load_csv(c.dataset_path, c.target, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
    return split_and_standardize(raw, c.fractions, derive_seed(o.seed, 0));
}

std::shared_ptr<const PosteriorState> fit_regressor(const Dataset& train, const CommonOptions& o) {
    HyperparameterSearchConfig hyper;
    hyper.restarts = o.restarts;
    hyper.seed = derive_seed(o.seed, 1);
    const Hyperparameters init = default_hyperparameters(train);
    const FittedHyperparameters fit = optimize_hyperparameters(train, init, 0.1 * init.amplitude(), hyper);
    std::cerr << "log marginal likelihood " << fit.log_likelihood << ", noise " << fit.noise_std << '\n';
    return std::make_shared<const PosteriorState>(fit_posterior(train, fit.theta, fit.noise_std));
}

int cmd_fit(const CommonOptions& o) {
    const ExperimentConfig c = experiment_config(o);
    const Splits splits = load_splits(o, c);
    const auto regressor = fit_regressor(splits.train, o);
    const fs::path out = prepare_out_dir(o.out_dir) / "regressor.json";
    write_json(out.string(), regressor_document(*regressor, splits.standardization));
    std::cout << out.string() << '\n';
    return 0;
}

int cmd_calibrate(const CommonOptions& o) {
    const ExperimentConfig c = experiment_config(o);
    const Splits splits = load_splits(o, c);
    std::shared_ptr<const PosteriorState> regressor;
    Standardization standardization = splits.standardization;
    Dataset cal = splits.cal;
    if (!o.model.empty()) {
        const LoadedModel loaded = model_from_json(read_json(o.model));
        regressor = loaded.regressor;
        standardization = loaded.standardization;
        std::vector<std::string> ignored;
        const Dataset raw = load_csv(c.dataset_path, c.target, &ignored);
        cal = standardization.apply(raw.subset(splits.indices.cal));
    } else {
        regressor = fit_regressor(splits.train, o);
    }
    const fs::path dir = prepare_out_dir(o.out_dir);
    for (Method method : c.methods) {
        Json doc;
        switch (method) {
            case Method::ours: {
                const std::vector<double> grid = c.delta_grid ? *c.delta_grid : theorem_grid(cal.size(), c.grid_cap);
                const CalibrationModel model = calibrate_all(grid, cal, regressor, c.calibration);
                doc = to_json(model, standardization);
                break;
            }
            case Method::rk:
                doc = to_json(fit_baseline(BaselineKind::scaled, cal, regressor), standardization);
                break;
            case Method::rv:
                doc = to_json(fit_baseline(BaselineKind::randomized_scaled, cal, regressor, derive_seed(o.seed, 2)),
                              standardization);
                break;
            case Method::rm:
                doc = to_json(fit_baseline(BaselineKind::constant_width, cal, regressor), standardization);
                break;
            case Method::base:
                doc = to_json(GaussianModel(regressor), standardization);
                break;
        }
        const fs::path out = dir / (to_string(method) + ".json");
        write_json(out.string(), doc);
        std::cout << out.string() << '\n';
    }
    return 0;
}

int cmd_eval(const CommonOptions& o) {
    if (o.model.empty()) throw ConfigError("--model is required");
    if (o.dataset.empty()) throw ConfigError("--dataset is required");
    const LoadedModel loaded = model_from_json(read_json(o.model));
    std::vector<std::string> warnings;
    const Dataset raw = load_csv(o.dataset, optional_target(o), &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
    const Dataset test = loaded.standardization.apply(raw);
    SharpnessOptions sharp;
    sharp.nll_max_points = o.nll_points;
    const MetricsReport report = evaluate(*loaded.model, test, 21, sharp);
    const fs::path dir = prepare_out_dir(o.out_dir);
    write_json((dir / "metrics.json").string(), to_json(report));
    write_reliability_csv((dir / "reliability.csv").string(), report.observed);
    std::cout << "ece " << report.ece << "  avg_std " << report.avg_std << "  nll " << report.nll << "  ci95 "
              << report.ci95_width << '\n';
    return 0;
}

int cmd_benchmark(const CommonOptions& o) {
    const ExperimentConfig c = experiment_config(o);
    std::vector<std::string> warnings;
    const Dataset raw = load_csv(c.dataset_path, c.target, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
    const ResultTable table = run_experiment(c, raw);
    const fs::path dir = prepare_out_dir(o.out_dir);
    write_json((dir / "results.json").string(), to_json(table));
    for (const ResultCell& cell : table.cells) {
        write_reliability_csv((dir / ("reliability_" + to_string(cell.method) + ".csv")).string(), cell.observed);
        std::cout << cell.dataset << ' ' << to_string(cell.method) << "  ece " << cell.ece.mean << " +- "
                  << cell.ece.std << "  std " << cell.avg_std.mean << "  nll " << cell.nll.mean << "  ci95 "
                  << cell.ci95_width.mean << '\n';
    }
    if (!table.repetitions.empty()) {
        for (const auto& [method, band] : table.repetitions.front().bands) {
            write_band_csv((dir / ("band_" + to_string(method) + ".csv")).string(), band, raw.feature_names);
        }
    }
    return 0;
}

int cmd_bayesopt(const CommonOptions& o, const BayesOptOptions& b) {
    const TestFunction function = test_function_from_string(b.function);
    std::vector<AcquisitionKind> kinds;
    if (b.kind == "both") {
        kinds = {AcquisitionKind::calibrated_ucb, AcquisitionKind::vanilla_ucb};
    } else {
        kinds = {acquisition_kind_from_string(b.kind)};
    }
    if (b.budget < 1 || b.seeds < 1) throw ConfigError("--budget and --seeds must be positive");
    BayesOptConfig config;
    config.calibration = calibration_config(o);
    config.hyperparameters.restarts = o.restarts;
    const fs::path dir = prepare_out_dir(o.out_dir);
    Json summary = Json::array();
    for (AcquisitionKind kind : kinds) {
        const std::vector<BayesOptTrace> traces = run_bayesopt_seeds(function, kind, b.budget, b.seeds, o.seed, config);
        for (const BayesOptTrace& t : traces) {
            write_trace_csv(
                (dir / (to_string(function) + "_" + to_string(kind) + "_seed" + std::to_string(t.seed) + ".csv"))
                    .string(),
                t);
        }
        const RegretSummary s = summarize_regret(traces);
        summary.push_back(to_json(s));
        std::cout << to_string(function) << ' ' << to_string(kind) << "  cumulative " << s.final_cumulative_regret
                  << "  simple " << s.final_simple_regret << '\n';
    }
    write_json((dir / "regret_summary.json").string(), summary);
    return 0;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool experiment) {
    cmd->add_option("--dataset", o.dataset, "CSV file with a header row");
    cmd->add_option("--target", o.target, "target column (default: last column)");
    cmd->add_option("--seed", o.seed, "base random seed");
    cmd->add_option("--out-dir", o.out_dir, "output directory");
    cmd->add_option("--restarts", o.restarts, "random restarts of the likelihood search");
    if (!experiment) return;
    cmd->add_option("--split", o.split, "train,cal,test fractions");
    cmd->add_option("--reps", o.reps, "repetitions");
    cmd->add_option("--methods", o.methods, "comma list of ours, rk, rv, rm, base");
    cmd->add_option("--delta-grid", o.delta_grid, "'theorem', a level cap, or a comma list of levels");
    cmd->add_option("--subset-cap", o.subset_cap, "training rows used while searching calibration parameters");
    cmd->add_option("--mode", o.mode, "full or line-search")->check(CLI::IsMember({"full", "line-search"}));
    cmd->add_option("--nll-points", o.nll_points, "test points used for NLL (0 = all)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sharp calibrated Gaussian-process regression"};
    app.require_subcommand(1);
    CommonOptions o;
    BayesOptOptions b;

    CLI::App* fit = app.add_subcommand("fit", "fit the regressor on the training split");
    add_common(fit, o, true);
    CLI::App* calibrate = app.add_subcommand("calibrate", "train calibration models on the calibration split");
    add_common(calibrate, o, true);
    calibrate->add_option("--model", o.model, "regressor JSON from `fit` (refit if omitted)");
    CLI::App* eval = app.add_subcommand("eval", "metrics of a saved model on a test CSV");
    add_common(eval, o, false);
    eval->add_option("--model", o.model, "model JSON")->required();
    eval->add_option("--nll-points", o.nll_points, "test points used for NLL (0 = all)");
    CLI::App* bench = app.add_subcommand("benchmark", "repeated split/fit/calibrate/evaluate protocol");
    add_common(bench, o, true);
    CLI::App* bo = app.add_subcommand("bayesopt", "calibrated vs vanilla UCB on a test function");
    bo->add_option("--function", b.function, "ackley or rosenbrock");
    bo->add_option("--kind", b.kind, "calibrated, vanilla or both");
    bo->add_option("--budget", b.budget, "queries per run");
    bo->add_option("--seeds", b.seeds, "number of seeds");
    bo->add_option("--seed", o.seed, "first seed");
    bo->add_option("--out-dir", o.out_dir, "output directory");
    bo->add_option("--mode", o.mode, "full or line-search")->check(CLI::IsMember({"full", "line-search"}));
    bo->add_option("--restarts", o.restarts, "random restarts of the likelihood search");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*fit) return cmd_fit(o);
        if (*calibrate) return cmd_calibrate(o);
        if (*eval) return cmd_eval(o);
        if (*bench) return cmd_benchmark(o);
        if (*bo) return cmd_bayesopt(o, b);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << " (jitter " << e.jitter() << ")\n";
        return kExitNumerical;
    } catch (const OptimizationError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
