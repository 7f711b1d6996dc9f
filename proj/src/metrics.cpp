#include "calgp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "calgp/parallel.hpp"

namespace calgp {

Eigen::VectorXd QuantileModel::cdfs(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets) const {
    if (inputs.rows() != targets.size()) throw std::invalid_argument("cdfs: inputs and targets disagree");
    Eigen::VectorXd out(targets.size());
    parallel_for(static_cast<std::size_t>(targets.size()), [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        out(r) = cdf(inputs.row(r).transpose(), targets(r));
    });
    return out;
}

Eigen::MatrixXd QuantileModel::quantile_table(const std::vector<double>& deltas, const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd table(inputs.rows(), static_cast<Eigen::Index>(deltas.size()));
    parallel_for(deltas.size(), [&](std::size_t k) {
        table.col(static_cast<Eigen::Index>(k)) = quantiles(deltas[k], inputs);
    });
    return table;
}

namespace {

void require_test_data(const Dataset& test) {
    if (test.size() < 1) throw std::invalid_argument("metrics: empty test set");
    if (test.inputs.rows() != test.targets.size()) throw std::invalid_argument("metrics: malformed test set");
}

}  // namespace

double observed_confidence(const QuantileModel& model, const Dataset& test, double p) {
    require_test_data(test);
    const Eigen::VectorXd q = model.quantiles(p, test.inputs);
    return static_cast<double>((test.targets.array() <= q.array()).count()) / static_cast<double>(test.size());
}

std::vector<double> confidence_grid(std::size_t m) {
    if (m < 2) throw std::invalid_argument("confidence_grid: need at least two levels");
    std::vector<double> grid(m);
    for (std::size_t j = 0; j < m; ++j) grid[j] = static_cast<double>(j) / static_cast<double>(m - 1);
    return grid;
}

std::vector<std::pair<double, double>> reliability_curve(const QuantileModel& model, const Dataset& test,
                                                         std::size_t m) {
    require_test_data(test);
    const std::vector<double> grid = confidence_grid(m);
    const Eigen::MatrixXd table = model.quantile_table(grid, test.inputs);
    std::vector<std::pair<double, double>> curve;
    curve.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto below = (test.targets.array() <= table.col(static_cast<Eigen::Index>(j)).array()).count();
        curve.emplace_back(grid[j], static_cast<double>(below) / static_cast<double>(test.size()));
    }
    return curve;
}

double ece(const std::vector<std::pair<double, double>>& curve) {
    double total = 0.0;
    for (const auto& [p, observed] : curve) total += (p - observed) * (p - observed);
    return total;
}

double ece(const QuantileModel& model, const Dataset& test, std::size_t m) {
    return ece(reliability_curve(model, test, m));
}

Eigen::VectorXd implied_stddevs(const QuantileModel& model, const Eigen::MatrixXd& inputs, std::size_t levels) {
    if (levels < 2) throw std::invalid_argument("implied_stddevs: need at least two levels");
    std::vector<double> grid(levels);
    for (std::size_t k = 0; k < levels; ++k) grid[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(levels);
    const Eigen::MatrixXd table = model.quantile_table(grid, inputs);
    const Eigen::VectorXd mean = table.rowwise().mean();
    const Eigen::MatrixXd centred = table.colwise() - mean;
    return (centred.rowwise().squaredNorm() / static_cast<double>(levels)).cwiseSqrt();
}

double negative_log_density(const QuantileModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                            const SharpnessOptions& options, bool* floored) {
    const double iqr = model.quantile(0.75, x) - model.quantile(0.25, x);
    const double h = options.step_fraction * iqr;
    double density = 0.0;
    if (h > 0.0 && std::isfinite(h)) density = (model.cdf(x, y + h) - model.cdf(x, y - h)) / (2.0 * h);
    const bool clamp = !(density > options.density_floor);
    if (floored) *floored = clamp;
    return -std::log(clamp ? options.density_floor : density);
}

Sharpness sharpness(const QuantileModel& model, const Dataset& test, const SharpnessOptions& options) {
    require_test_data(test);
    Sharpness out;
    const Eigen::MatrixXd band = model.quantile_table({0.025, 0.975}, test.inputs);
    out.ci95_width = (band.col(1) - band.col(0)).mean();
    out.avg_std = implied_stddevs(model, test.inputs, options.std_levels).mean();

    if (options.compute_nll) {
        std::size_t n = static_cast<std::size_t>(test.size());
        if (options.nll_max_points > 0) n = std::min(n, options.nll_max_points);
        std::vector<double> nll(n);
        std::vector<char> floored(n, 0);
        parallel_for(n, [&](std::size_t i) {
            const auto r = static_cast<Eigen::Index>(i);
            bool f = false;
            nll[i] = negative_log_density(model, test.inputs.row(r).transpose(), test.targets(r), options, &f);
            floored[i] = f ? 1 : 0;
        });
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            total += nll[i];
            out.floored_points += static_cast<std::size_t>(floored[i]);
        }
        out.nll = total / static_cast<double>(n);
        out.nll_points = n;
    }
    return out;
}

MetricsReport evaluate(const QuantileModel& model, const Dataset& test, std::size_t m,
                       const SharpnessOptions& options) {
    MetricsReport report;
    report.observed = reliability_curve(model, test, m);
    report.ece = ece(report.observed);
    const Sharpness s = sharpness(model, test, options);
    report.avg_std = s.avg_std;
    report.nll = s.nll;
    report.ci95_width = s.ci95_width;
    report.floored_points = s.floored_points;
    return report;
}

}  // namespace calgp
