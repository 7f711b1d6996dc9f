#include "calgp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "calgp/calibration.hpp"
#include "calgp/seed.hpp"

namespace calgp {

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::scaled: return "scaled";
        case BaselineKind::randomized_scaled: return "randomized_scaled";
        case BaselineKind::constant_width: return "constant_width";
    }
    throw std::invalid_argument("unknown baseline kind");
}

BaselineKind baseline_kind_from_string(const std::string& name) {
    if (name == "scaled" || name == "rk") return BaselineKind::scaled;
    if (name == "randomized_scaled" || name == "rv") return BaselineKind::randomized_scaled;
    if (name == "constant_width" || name == "rm") return BaselineKind::constant_width;
    throw std::invalid_argument("unknown baseline kind '" + name + "'");
}

BaselineModel::BaselineModel(BaselineKind kind, std::shared_ptr<const PosteriorState> regressor,
                             Eigen::VectorXd scores, std::uint64_t seed)
    : kind_(kind), regressor_(std::move(regressor)), scores_(std::move(scores)), seed_(seed) {
    if (!regressor_) throw std::invalid_argument("BaselineModel: missing regressor");
    if (scores_.size() < 1) throw std::invalid_argument("BaselineModel: empty score vector");
    if (!scores_.allFinite()) throw std::invalid_argument("BaselineModel: non-finite scores");
    if (!std::is_sorted(scores_.data(), scores_.data() + scores_.size())) {
        throw std::invalid_argument("BaselineModel: scores must be sorted ascending");
    }
}

double BaselineModel::cell_exponent(Eigen::Index cell) const {
    const std::uint64_t h = derive_seed(seed_, static_cast<std::uint64_t>(cell));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return std::exp(-2.0 + 4.0 * u);
}

double BaselineModel::score_quantile(double delta) const {
    const QlinBracket b = q_lin_bracket(std::clamp(delta, 0.0, 1.0), scores_.size());
    const double lo = scores_(b.lower);
    if (b.weight == 0.0) return lo;
    double w = b.weight;
    if (kind_ == BaselineKind::randomized_scaled) w = std::pow(w, cell_exponent(b.lower));
    return lo + w * (scores_(b.upper) - lo);
}

Eigen::VectorXd BaselineModel::means(const Eigen::MatrixXd& inputs) const { return regressor_->means(inputs); }

Eigen::VectorXd BaselineModel::quantiles(double delta, const Eigen::MatrixXd& inputs) const {
    const double s = score_quantile(delta);
    if (kind_ == BaselineKind::constant_width) return (means(inputs).array() + s).matrix();
    return means(inputs) + s * regressor_->stddevs(inputs);
}

Eigen::MatrixXd BaselineModel::quantile_table(const std::vector<double>& deltas,
                                              const Eigen::MatrixXd& inputs) const {
    const Eigen::VectorXd mu = means(inputs);
    const Eigen::VectorXd sig = kind_ == BaselineKind::constant_width ? Eigen::VectorXd::Ones(inputs.rows())
                                                                      : regressor_->stddevs(inputs);
    Eigen::MatrixXd table(inputs.rows(), static_cast<Eigen::Index>(deltas.size()));
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        table.col(static_cast<Eigen::Index>(k)) = mu + score_quantile(deltas[k]) * sig;
    }
    return table;
}

std::pair<double, double> BaselineModel::delta_range() const {
    const auto n = static_cast<double>(scores_.size());
    return {1.0 / (n + 1.0), n / (n + 1.0)};
}

double BaselineModel::cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
    double score = y - regressor_->mean(x);
    if (kind_ != BaselineKind::constant_width) score /= regressor_->stddev(x);
    const Eigen::Index n = scores_.size();
    const auto [lo, hi] = delta_range();
    if (score <= scores_(0)) return lo;
    if (score >= scores_(n - 1)) return hi;
    const double* begin = scores_.data();
    const auto k = static_cast<Eigen::Index>(std::upper_bound(begin, begin + n, score) - begin) - 1;
    double w = (score - scores_(k)) / (scores_(k + 1) - scores_(k));
    if (kind_ == BaselineKind::randomized_scaled) w = std::pow(w, 1.0 / cell_exponent(k));
    return (static_cast<double>(k + 1) + w) / static_cast<double>(n + 1);
}

BaselineModel fit_baseline(BaselineKind kind, const Dataset& cal_data,
                           std::shared_ptr<const PosteriorState> regressor, std::uint64_t seed) {
    if (!regressor) throw std::invalid_argument("fit_baseline: missing regressor");
    if (cal_data.size() < 1) throw std::invalid_argument("fit_baseline: empty calibration set");
    Eigen::VectorXd scores = residuals(cal_data, *regressor);
    if (kind != BaselineKind::constant_width) scores = z_scores(scores, regressor->stddevs(cal_data.inputs));
    std::sort(scores.data(), scores.data() + scores.size());
    return BaselineModel(kind, std::move(regressor), std::move(scores), seed);
}

GaussianModel::GaussianModel(std::shared_ptr<const PosteriorState> regressor) : regressor_(std::move(regressor)) {
    if (!regressor_) throw std::invalid_argument("GaussianModel: missing regressor");
}

Eigen::VectorXd GaussianModel::means(const Eigen::MatrixXd& inputs) const { return regressor_->means(inputs); }

std::pair<double, double> GaussianModel::delta_range() const { return {kGaussianTail, 1.0 - kGaussianTail}; }

Eigen::VectorXd GaussianModel::quantiles(double delta, const Eigen::MatrixXd& inputs) const {
    const double p = std::clamp(delta, kGaussianTail, 1.0 - kGaussianTail);
    const double z = boost::math::quantile(boost::math::normal(), p);
    return means(inputs) + z * regressor_->stddevs(inputs);
}

Eigen::MatrixXd GaussianModel::quantile_table(const std::vector<double>& deltas,
                                              const Eigen::MatrixXd& inputs) const {
    const Eigen::VectorXd mu = means(inputs);
    const Eigen::VectorXd sig = regressor_->stddevs(inputs);
    Eigen::MatrixXd table(inputs.rows(), static_cast<Eigen::Index>(deltas.size()));
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const double p = std::clamp(deltas[k], kGaussianTail, 1.0 - kGaussianTail);
        table.col(static_cast<Eigen::Index>(k)) = mu + boost::math::quantile(boost::math::normal(), p) * sig;
    }
    return table;
}

double GaussianModel::cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
    const double z = (y - regressor_->mean(x)) / regressor_->stddev(x);
    return std::clamp(boost::math::cdf(boost::math::normal(), z), kGaussianTail, 1.0 - kGaussianTail);
}

}  // namespace calgp
