#include "calgp/gp_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "calgp/error.hpp"
#include "calgp/kernels.hpp"
#include "calgp/optimizer.hpp"

namespace calgp {

Dataset Dataset::from_arrays(Eigen::MatrixXd inputs, Eigen::VectorXd targets) {
    Dataset d;
    const Eigen::Index dim = inputs.cols();
    d.inputs = std::move(inputs);
    d.targets = std::move(targets);
    d.feature_means = Eigen::VectorXd::Zero(dim);
    d.feature_stds = Eigen::VectorXd::Ones(dim);
    d.validate();
    return d;
}

void Dataset::validate() const {
    if (inputs.rows() < 1 || inputs.cols() < 1) {
        throw std::invalid_argument("dataset needs at least one row and one column");
    }
    if (inputs.rows() != targets.size()) {
        throw std::invalid_argument("dataset: input rows and target length differ");
    }
    if (!inputs.allFinite() || !targets.allFinite()) {
        throw std::invalid_argument("dataset contains non-finite entries");
    }
    if (feature_means.size() != inputs.cols() || feature_stds.size() != inputs.cols()) {
        throw std::invalid_argument("dataset: standardization metadata has wrong length");
    }
    if ((feature_stds.array() <= 0.0).any() || !(target_std > 0.0)) {
        throw std::invalid_argument("dataset: standardization scales must be positive");
    }
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& index) const {
    Dataset d = *this;
    d.inputs.resize(static_cast<Eigen::Index>(index.size()), inputs.cols());
    d.targets.resize(static_cast<Eigen::Index>(index.size()));
    for (std::size_t r = 0; r < index.size(); ++r) {
        d.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(index[r]);
        d.targets(static_cast<Eigen::Index>(r)) = targets(index[r]);
    }
    return d;
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& a, double* jitter_used) {
    const double n = static_cast<double>(a.rows());
    const double scale = a.trace() / n;
    double jitter = 0.0;
    for (double factor = 0.0; factor <= 1e-4 * (1.0 + 1e-9); factor = (factor == 0.0 ? 1e-10 : factor * 10.0)) {
        jitter = factor * scale;
        Eigen::LLT<Eigen::MatrixXd> llt;
        if (jitter == 0.0) {
            llt.compute(a);
        } else {
            Eigen::MatrixXd shifted = a;
            shifted.diagonal().array() += jitter;
            llt.compute(shifted);
        }
        if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
            if (jitter_used) *jitter_used = jitter;
            return llt.matrixL();
        }
    }
    std::ostringstream msg;
    msg << "Cholesky factorization failed with jitter up to " << jitter;
    throw NumericalError(msg.str(), jitter);
}

PosteriorState::PosteriorState(Eigen::MatrixXd inputs, const Eigen::VectorXd& targets,
                               Hyperparameters theta, double noise_std)
    : inputs_(std::move(inputs)), targets_(targets), theta_(std::move(theta)), noise_std_(noise_std) {
    if (!(noise_std_ > 0.0) || !std::isfinite(noise_std_)) {
        throw std::invalid_argument("noise standard deviation must be positive");
    }
    if (inputs_.rows() < 1 || inputs_.rows() != targets.size()) {
        throw std::invalid_argument("posterior: inputs and targets disagree in size");
    }
    if (!theta_.all_finite()) {
        throw std::invalid_argument("posterior: hyperparameters must be finite");
    }
    Eigen::MatrixXd a = gram_matrix(theta_, inputs_);
    a.diagonal().array() += noise_std_ * noise_std_;
    chol_ = robust_cholesky(a, &jitter_);
    weights_ = chol_.triangularView<Eigen::Lower>().solve(targets);
    chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(weights_);
}

double PosteriorState::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return means(x.transpose())(0);
}

double PosteriorState::variance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return variances(x.transpose())(0);
}

double PosteriorState::stddev(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return std::sqrt(variance(x));
}

Eigen::VectorXd PosteriorState::means(const Eigen::MatrixXd& queries) const {
    return cross_covariance(theta_, queries, inputs_) * weights_;
}

Eigen::VectorXd PosteriorState::variances(const Eigen::MatrixXd& queries) const {
    return predictive_variance(chol_, cross_covariance(theta_, queries, inputs_),
                               ArdSquaredExponential::prior_variance(theta_),
                               noise_std_ * noise_std_);
}

Eigen::VectorXd PosteriorState::stddevs(const Eigen::MatrixXd& queries) const {
    return variances(queries).array().sqrt().matrix();
}

PosteriorState fit_posterior(const Dataset& data, const Hyperparameters& theta, double sigma0) {
    if (data.dim() != theta.dim()) {
        throw std::invalid_argument("fit_posterior: data dimension does not match hyperparameters");
    }
    return PosteriorState(data.inputs, data.targets, theta, sigma0);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

struct Factorized {
    Eigen::MatrixXd k;     // K(theta) without noise
    Eigen::MatrixXd chol;  // of K + (s0^2 + jitter) I
    Eigen::VectorXd alpha;
};

Factorized factorize(const Dataset& data, const Hyperparameters& theta, double sigma0) {
    if (!(sigma0 > 0.0)) throw std::invalid_argument("sigma0 must be positive");
    if (data.dim() != theta.dim()) {
        throw std::invalid_argument("log_marginal_likelihood: dimension mismatch");
    }
    Factorized f;
    f.k = gram_matrix(theta, data.inputs);
    Eigen::MatrixXd a = f.k;
    a.diagonal().array() += sigma0 * sigma0;
    f.chol = robust_cholesky(a);
    f.alpha = f.chol.triangularView<Eigen::Lower>().solve(data.targets);
    f.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(f.alpha);
    return f;
}

double lml_value(const Dataset& data, const Factorized& f) {
    const double n = static_cast<double>(data.size());
    return -f.chol.diagonal().array().log().sum() - 0.5 * data.targets.dot(f.alpha) - 0.5 * n * kLog2Pi;
}

}  // namespace

double log_marginal_likelihood(const Dataset& data, const Hyperparameters& theta, double sigma0) {
    return lml_value(data, factorize(data, theta, sigma0));
}

LogLikelihood log_marginal_likelihood_with_gradient(const Dataset& data,
                                                    const Hyperparameters& theta,
                                                    double sigma0) {
    const Factorized f = factorize(data, theta, sigma0);
    const Eigen::Index n = data.size();
    const Eigen::Index d = data.dim();

    LogLikelihood out;
    out.value = lml_value(data, f);

    // W = alpha alpha^T - A^{-1}; dLML/dp = 1/2 tr(W dA/dp).
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n);
    f.chol.triangularView<Eigen::Lower>().solveInPlace(w);
    f.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(w);
    w = f.alpha * f.alpha.transpose() - w;

    out.gradient.resize(d + 2);
    const Eigen::MatrixXd wk = w.cwiseProduct(f.k);
    out.gradient(0) = wk.sum();
    const Eigen::VectorXd s = theta.inv_lengthscales();
    for (Eigen::Index m = 0; m < d; ++m) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index l = 0; l < j; ++l) {
                const double u = (data.inputs(j, m) - data.inputs(l, m)) * s(m);
                acc += wk(j, l) * u * u;
            }
        }
        // Off-diagonal pairs appear twice in the symmetric sum.
        out.gradient(m + 1) = -acc;
    }
    out.gradient(d + 1) = sigma0 * sigma0 * w.trace();
    return out;
}

Hyperparameters default_hyperparameters(const Dataset& data) {
    const Eigen::VectorXd range = data.inputs.colwise().maxCoeff() - data.inputs.colwise().minCoeff();
    Eigen::VectorXd ls(data.dim());
    for (Eigen::Index m = 0; m < data.dim(); ++m) ls(m) = range(m) > 0.0 ? 0.5 * range(m) : 1.0;
    const double centered = (data.targets.array() - data.targets.mean()).matrix().norm();
    double sy = data.size() > 1 ? centered / std::sqrt(static_cast<double>(data.size() - 1)) : 0.0;
    if (!(sy > 0.0)) sy = 1.0;
    return Hyperparameters::from_natural(sy, ls);
}

FittedHyperparameters optimize_hyperparameters(const Dataset& data,
                                               const Hyperparameters& init,
                                               double sigma0_init,
                                               const HyperparameterSearchConfig& config) {
    data.validate();
    if (init.dim() != data.dim()) {
        throw std::invalid_argument("optimize_hyperparameters: init dimension mismatch");
    }
    const Eigen::Index d = data.dim();
    const Eigen::VectorXd range = data.inputs.colwise().maxCoeff() - data.inputs.colwise().minCoeff();
    const double centered = (data.targets.array() - data.targets.mean()).matrix().norm();
    double sy = data.size() > 1 ? centered / std::sqrt(static_cast<double>(data.size() - 1)) : 0.0;
    if (!(sy > 0.0)) sy = 1.0;

    // Box on the packed log parameters; the objective is +inf outside it.
    Eigen::VectorXd lo(d + 2), hi(d + 2);
    lo(0) = std::log(1e-6 * sy);
    hi(0) = std::log(1e3 * sy);
    for (Eigen::Index m = 0; m < d; ++m) {
        const double r = range(m) > 0.0 ? range(m) : 1.0;
        lo(m + 1) = std::log(1e-3 / r);
        hi(m + 1) = std::log(1e3 / r);
    }
    lo(d + 1) = std::log(1e-4 * sy);
    hi(d + 1) = std::log(10.0 * sy);

    const Objective negative_lml = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
        if ((z.array() < lo.array()).any() || (z.array() > hi.array()).any()) {
            return std::numeric_limits<double>::infinity();
        }
        const Hyperparameters theta = Hyperparameters::from_vector(z.head(d + 1));
        const double s0 = std::exp(z(d + 1));
        try {
            if (grad) {
                LogLikelihood l = log_marginal_likelihood_with_gradient(data, theta, s0);
                *grad = -l.gradient;
                return -l.value;
            }
            return -log_marginal_likelihood(data, theta, s0);
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    std::vector<Eigen::VectorXd> starts;
    Eigen::VectorXd first(d + 2);
    first.head(d + 1) = init.to_vector();
    first(d + 1) = std::log(sigma0_init);
    starts.push_back(first.cwiseMax(lo).cwiseMin(hi));

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto log_uniform = [&](double a, double b) {
        return std::log(a) + unit(rng) * (std::log(b) - std::log(a));
    };
    for (int r = 0; r < config.restarts; ++r) {
        Eigen::VectorXd z(d + 2);
        z(0) = log_uniform(0.1 * sy, 2.0 * sy);
        for (Eigen::Index m = 0; m < d; ++m) {
            const double rm = range(m) > 0.0 ? range(m) : 1.0;
            z(m + 1) = -log_uniform(0.05 * rm, 2.0 * rm);
        }
        z(d + 1) = log_uniform(0.01 * sy, 0.5 * sy);
        starts.push_back(z);
    }

    MinimizeOptions opts;
    opts.max_iterations = config.max_iterations;
    opts.gradient_tolerance = config.gradient_tolerance;

    FittedHyperparameters best;
    double best_value = std::numeric_limits<double>::infinity();
    for (const Eigen::VectorXd& z0 : starts) {
        const MinimizeResult r = minimize_lbfgs(negative_lml, z0, opts);
        if (r.failed || !std::isfinite(r.value)) {
            ++best.failed_restarts;
            continue;
        }
        if (r.value < best_value) {
            best_value = r.value;
            best.theta = Hyperparameters::from_vector(r.x.head(d + 1));
            best.noise_std = std::exp(r.x(d + 1));
            best.log_likelihood = -r.value;
            best.iterations = r.iterations;
            best.converged = r.converged;
        }
    }
    if (!std::isfinite(best_value)) {
        throw OptimizationError("log marginal likelihood optimization failed from every start");
    }
    return best;
}

MonotonicityReport check_monotonicity(const Dataset& data,
                                      const Hyperparameters& theta_low,
                                      const Hyperparameters& theta_high,
                                      double sigma0,
                                      const Eigen::MatrixXd& probe_points,
                                      int segments,
                                      double tolerance) {
    if (!componentwise_leq(theta_low, theta_high)) {
        throw std::invalid_argument("check_monotonicity: theta_low must be <= theta_high");
    }
    if (segments < 1) throw std::invalid_argument("check_monotonicity: need at least one segment");
    const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(data.size());

    MonotonicityReport report;
    report.max_violation = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd previous;
    for (int t = 0; t <= segments; ++t) {
        const Hyperparameters theta = interpolate(theta_low, theta_high, static_cast<double>(t) / segments);
        const PosteriorState state(data.inputs, zeros, theta, sigma0);
        Eigen::VectorXd var = state.variances(probe_points);
        if (t > 0) {
            for (Eigen::Index p = 0; p < var.size(); ++p) {
                const double gap = previous(p) - var(p);
                if (gap > report.max_violation) {
                    report.max_violation = gap;
                    report.worst_probe = p;
                    report.worst_segment = t - 1;
                }
            }
        }
        previous = std::move(var);
    }
    report.max_violation = std::max(report.max_violation, 0.0);
    report.violated = report.max_violation > tolerance;
    return report;
}

}  // namespace calgp
