#include "calgp/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "calgp/baselines.hpp"
#include "calgp/error.hpp"
#include "calgp/parallel.hpp"
#include "calgp/seed.hpp"

namespace calgp {

Standardization Standardization::fit(const Dataset& raw) {
    raw.validate();
    Standardization s;
    const auto n = static_cast<double>(raw.size());
    s.feature_means = raw.inputs.colwise().mean().transpose();
    s.feature_stds.resize(raw.dim());
    for (Eigen::Index c = 0; c < raw.dim(); ++c) {
        const double ss = (raw.inputs.col(c).array() - s.feature_means(c)).square().sum();
        const double sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        s.feature_stds(c) = sd > 0.0 ? sd : 1.0;
    }
    s.target_mean = raw.targets.mean();
    const double ss = (raw.targets.array() - s.target_mean).square().sum();
    const double sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.target_std = sd > 0.0 ? sd : 1.0;
    s.feature_names = raw.feature_names;
    s.target_name = raw.target_name;
    return s;
}

Dataset Standardization::apply(const Dataset& raw) const {
    if (raw.dim() != feature_means.size()) throw ConfigError("standardization: dimension mismatch");
    Dataset out = raw;
    out.inputs = (raw.inputs.rowwise() - feature_means.transpose()).array().rowwise() /
                 feature_stds.transpose().array();
    out.targets = ((raw.targets.array() - target_mean) / target_std).matrix();
    out.feature_means = feature_means;
    out.feature_stds = feature_stds;
    out.target_mean = target_mean;
    out.target_std = target_std;
    if (!feature_names.empty()) out.feature_names = feature_names;
    if (!target_name.empty()) out.target_name = target_name;
    return out;
}

Standardization Standardization::identity(Eigen::Index dim) {
    Standardization s;
    s.feature_means = Eigen::VectorXd::Zero(dim);
    s.feature_stds = Eigen::VectorXd::Ones(dim);
    return s;
}

Standardization Standardization::of(const Dataset& data) {
    return {data.feature_means, data.feature_stds, data.target_mean, data.target_std, data.feature_names,
            data.target_name};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

double parse_cell(const std::string& text, std::size_t row, std::size_t col, const std::string& name) {
    const std::string t = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) {
        std::ostringstream msg;
        msg << "row " << row << ", column " << col + 1 << " (" << name << "): cannot parse '" << t
            << "' as a finite number";
        throw ConfigError(msg.str());
    }
    return value;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::optional<std::string>& target,
                 std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dataset '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header = split_line(line);
    for (std::string& h : header) h = trim(h);
    if (header.size() < 2) throw ConfigError("dataset needs at least one feature and a target column");

    std::size_t target_col = header.size() - 1;
    if (target) {
        const auto it = std::find(header.begin(), header.end(), *target);
        if (it == header.end()) throw ConfigError("target column '" + *target + "' not found");
        target_col = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<std::vector<double>> rows;
    std::size_t row_number = 1;
    while (std::getline(in, line)) {
        ++row_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size()) {
            std::ostringstream msg;
            msg << "row " << row_number << ": expected " << header.size() << " columns, found " << cells.size();
            throw ConfigError(msg.str());
        }
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) values[c] = parse_cell(cells[c], row_number, c, header[c]);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ConfigError("dataset '" + path + "' has no data rows");

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == target_col) continue;
        const double first = rows.front()[c];
        const bool constant = rows.size() > 1 && std::all_of(rows.begin(), rows.end(), [&](const auto& r) {
                                  return r[c] == first;
                              });
        if (constant) {
            if (warnings) warnings->push_back("dropped constant feature '" + header[c] + "'");
            continue;
        }
        keep.push_back(c);
    }
    if (keep.empty()) throw ConfigError("dataset has no non-constant feature columns");

    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(keep.size()));
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        for (std::size_t k = 0; k < keep.size(); ++k) x(r, static_cast<Eigen::Index>(k)) = row[keep[k]];
        y(r) = row[target_col];
    }
    Dataset data = Dataset::from_arrays(std::move(x), std::move(y));
    for (std::size_t c : keep) data.feature_names.push_back(header[c]);
    data.target_name = header[target_col];
    return data;
}

// ---------------------------------------------------------------------------
// Splitting

void SplitFractions::validate() const {
    if (!(train > 0.0 && cal > 0.0 && test > 0.0)) throw ConfigError("split fractions must be positive");
    if (std::abs(train + cal + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

SplitFractions parse_split(const std::string& text) {
    const std::vector<std::string> parts = split_line(text);
    if (parts.size() != 3) throw ConfigError("--split expects three comma-separated fractions");
    SplitFractions f;
    f.train = parse_cell(parts[0], 0, 0, "split");
    f.cal = parse_cell(parts[1], 0, 1, "split");
    f.test = parse_cell(parts[2], 0, 2, "split");
    f.validate();
    return f;
}

SplitIndices split_indices(Eigen::Index n, const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    const auto n_cal = static_cast<Eigen::Index>(std::floor(fractions.cal * static_cast<double>(n)));
    const auto n_test = static_cast<Eigen::Index>(std::floor(fractions.test * static_cast<double>(n)));
    const Eigen::Index n_train = n - n_cal - n_test;
    if (n_cal < 1 || n_test < 1 || n_train < 1) throw ConfigError("dataset too small for the requested split");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on the standard library.
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::uint64_t j = rng() % i;
        std::swap(order[i - 1], order[static_cast<std::size_t>(j)]);
    }
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.cal.assign(order.begin() + n_train, order.begin() + n_train + n_cal);
    s.test.assign(order.begin() + n_train + n_cal, order.end());
    return s;
}

Splits split_and_standardize(const Dataset& raw, const SplitFractions& fractions, std::uint64_t seed) {
    Splits out;
    out.indices = split_indices(raw.size(), fractions, seed);
    const Dataset train_raw = raw.subset(out.indices.train);
    out.standardization = Standardization::fit(train_raw);
    out.train = out.standardization.apply(train_raw);
    out.cal = out.standardization.apply(raw.subset(out.indices.cal));
    out.test = out.standardization.apply(raw.subset(out.indices.test));
    return out;
}

// ---------------------------------------------------------------------------
// Methods and configuration

std::string to_string(Method method) {
    switch (method) {
        case Method::ours: return "ours";
        case Method::rk: return "rk";
        case Method::rv: return "rv";
        case Method::rm: return "rm";
        case Method::base: return "base";
    }
    throw std::invalid_argument("unknown method");
}

Method method_from_string(const std::string& name) {
    for (Method m : {Method::ours, Method::rk, Method::rv, Method::rm, Method::base}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown method '" + name + "' (expected ours, rk, rv, rm or base)");
}

std::vector<Method> parse_methods(const std::string& text) {
    std::vector<Method> methods;
    for (const std::string& part : split_line(text)) {
        const std::string name = trim(part);
        if (name.empty()) continue;
        const Method m = method_from_string(name);
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
    if (methods.empty()) throw ConfigError("no methods given");
    return methods;
}

void ExperimentConfig::validate() const {
    fractions.validate();
    if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
    if (methods.empty()) throw ConfigError("no methods configured");
    if (calibration.subset_cap && *calibration.subset_cap < 1) throw ConfigError("subset cap must be positive");
    if (reliability_levels < 2) throw ConfigError("need at least two reliability levels");
    if (delta_grid) {
        if (delta_grid->empty()) throw ConfigError("empty delta grid");
        for (std::size_t i = 0; i < delta_grid->size(); ++i) {
            const double d = (*delta_grid)[i];
            if (!(d > 0.0 && d < 1.0)) throw ConfigError("delta grid values must lie in (0, 1)");
            if (i > 0 && !(d > (*delta_grid)[i - 1])) throw ConfigError("delta grid must be strictly increasing");
        }
    }
}

const std::vector<double>& band_levels() {
    static const std::vector<double> levels{0.025, 0.25, 0.5, 0.75, 0.975};
    return levels;
}

// ---------------------------------------------------------------------------
// Protocol

RepetitionResult run_repetition(const ExperimentConfig& config, const Splits& splits, int index,
                                std::uint64_t seed) {
    RepetitionResult result;
    result.index = index;
    result.seed = seed;

    HyperparameterSearchConfig hyper = config.hyperparameters;
    hyper.seed = derive_seed(seed, 1);
    const Hyperparameters init = default_hyperparameters(splits.train);
    const FittedHyperparameters fit = optimize_hyperparameters(splits.train, init, 0.1 * init.amplitude(), hyper);
    result.regressor_theta = fit.theta;
    result.regressor_noise = fit.noise_std;
    const auto regressor =
        std::make_shared<const PosteriorState>(fit_posterior(splits.train, fit.theta, fit.noise_std));

    for (Method method : config.methods) {
        std::unique_ptr<QuantileModel> model;
        int warnings = 0;
        switch (method) {
            case Method::ours: {
                const std::vector<double> grid =
                    config.delta_grid ? *config.delta_grid : theorem_grid(splits.cal.size(), config.grid_cap);
                auto cal = std::make_unique<CalibrationModel>(
                    calibrate_all(grid, splits.cal, regressor, config.calibration));
                for (const CalibrationLevel& level : cal->levels()) warnings += level.warning ? 1 : 0;
                model = std::move(cal);
                break;
            }
            case Method::rk:
                model = std::make_unique<BaselineModel>(fit_baseline(BaselineKind::scaled, splits.cal, regressor));
                break;
            case Method::rv:
                model = std::make_unique<BaselineModel>(
                    fit_baseline(BaselineKind::randomized_scaled, splits.cal, regressor, derive_seed(seed, 2)));
                break;
            case Method::rm:
                model = std::make_unique<BaselineModel>(
                    fit_baseline(BaselineKind::constant_width, splits.cal, regressor));
                break;
            case Method::base:
                model = std::make_unique<GaussianModel>(regressor);
                break;
        }
        result.metrics[method] = evaluate(*model, splits.test, config.reliability_levels, config.sharpness);
        result.warnings[method] = warnings;
        if (index < config.band_repetitions) {
            QuantileBand band;
            band.inputs = splits.test.inputs;
            band.targets = splits.test.targets;
            band.mean = model->means(splits.test.inputs);
            band.quantiles = model->quantile_table(band_levels(), splits.test.inputs);
            result.bands[method] = std::move(band);
        }
    }
    return result;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) return s;
    const auto n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

const ResultCell& ResultTable::cell(const std::string& dataset, Method method) const {
    for (const ResultCell& c : cells) {
        if (c.dataset == dataset && c.method == method) return c;
    }
    throw std::out_of_range("no result cell for " + dataset + "/" + to_string(method));
}

ResultTable aggregate(const std::string& dataset, const std::vector<Method>& methods,
                      std::vector<RepetitionResult> repetitions) {
    ResultTable table;
    for (Method method : methods) {
        ResultCell cell;
        cell.dataset = dataset;
        cell.method = method;
        std::vector<double> ece, avg_std, nll, ci95;
        for (const RepetitionResult& rep : repetitions) {
            const MetricsReport& m = rep.metrics.at(method);
            ece.push_back(m.ece);
            avg_std.push_back(m.avg_std);
            nll.push_back(m.nll);
            ci95.push_back(m.ci95_width);
            cell.warnings += rep.warnings.at(method);
            if (cell.observed.empty()) {
                cell.observed.assign(m.observed.size(), {0.0, 0.0});
                for (std::size_t j = 0; j < m.observed.size(); ++j) cell.observed[j].first = m.observed[j].first;
            }
            for (std::size_t j = 0; j < m.observed.size(); ++j) cell.observed[j].second += m.observed[j].second;
        }
        for (auto& point : cell.observed) point.second /= static_cast<double>(repetitions.size());
        cell.ece = summarize(ece);
        cell.avg_std = summarize(avg_std);
        cell.nll = summarize(nll);
        cell.ci95_width = summarize(ci95);
        table.cells.push_back(std::move(cell));
    }
    table.repetitions = std::move(repetitions);
    return table;
}

ResultTable run_experiment(const ExperimentConfig& config) {
    config.validate();
    return run_experiment(config, load_csv(config.dataset_path, config.target));
}

ResultTable run_experiment(const ExperimentConfig& config, const Dataset& raw) {
    config.validate();
    const auto reps = static_cast<std::size_t>(config.repetitions);
    std::vector<RepetitionResult> results(reps);
    parallel_for(reps, [&](std::size_t r) {
        const std::uint64_t seed = derive_seed(config.seed, r);
        try {
            const Splits splits = split_and_standardize(raw, config.fractions, seed);
            results[r] = run_repetition(config, splits, static_cast<int>(r), seed);
        } catch (const NumericalError& e) {
            throw NumericalError("repetition " + std::to_string(r) + ": " + e.what(), e.jitter());
        } catch (const OptimizationError& e) {
            throw OptimizationError("repetition " + std::to_string(r) + ": " + e.what());
        }
    });
    std::string name = config.dataset_name;
    if (name.empty()) {
        name = config.dataset_path;
        const auto slash = name.find_last_of('/');
        if (slash != std::string::npos) name = name.substr(slash + 1);
        const auto dot = name.find_last_of('.');
        if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
        if (name.empty()) name = "dataset";
    }
    return aggregate(name, config.methods, std::move(results));
}

// ---------------------------------------------------------------------------
// CSV output

namespace {

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << std::setprecision(17);
    return out;
}

}  // namespace

void write_reliability_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve) {
    std::ofstream out = open_output(path);
    out << "expected,observed\n";
    for (const auto& [p, observed] : curve) out << p << ',' << observed << '\n';
}

void write_band_csv(const std::string& path, const QuantileBand& band,
                    const std::vector<std::string>& feature_names) {
    std::ofstream out = open_output(path);
    for (Eigen::Index c = 0; c < band.inputs.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        out << (k < feature_names.size() ? feature_names[k] : "x" + std::to_string(c)) << ',';
    }
    out << "y,mean";
    for (double level : band_levels()) out << ",q" << level;
    out << '\n';
    for (Eigen::Index r = 0; r < band.inputs.rows(); ++r) {
        for (Eigen::Index c = 0; c < band.inputs.cols(); ++c) out << band.inputs(r, c) << ',';
        out << band.targets(r) << ',' << band.mean(r);
        for (Eigen::Index k = 0; k < band.quantiles.cols(); ++k) out << ',' << band.quantiles(r, k);
        out << '\n';
    }
}

}  // namespace calgp
