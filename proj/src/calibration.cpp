#include "calgp/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <Eigen/Dense>

#include "calgp/error.hpp"
#include "calgp/kernels.hpp"
#include "calgp/optimizer.hpp"
#include "calgp/parallel.hpp"

namespace calgp {

QlinBracket q_lin_bracket(double delta, Eigen::Index n) {
    if (n < 1) throw std::invalid_argument("q_lin: empty score vector");
    if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("q_lin: delta must lie in [0, 1]");
    double t = delta * static_cast<double>(n + 1);
    // delta = j/(n+1) rounds to within a few ulps of the integer j.
    const double nearest = std::round(t);
    if (std::abs(t - nearest) <= 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, t)) {
        t = nearest;
    }
    if (t <= 1.0) return {0, 0, 0.0};
    if (t >= static_cast<double>(n)) return {n - 1, n - 1, 0.0};
    const double l = std::floor(t);
    const auto li = static_cast<Eigen::Index>(l);
    const double w = t - l;
    if (w == 0.0) return {li - 1, li - 1, 0.0};
    return {li - 1, li, w};
}

double q_lin_sorted(double delta, std::span<const double> sorted) {
    const QlinBracket b = q_lin_bracket(delta, static_cast<Eigen::Index>(sorted.size()));
    const double lo = sorted[static_cast<std::size_t>(b.lower)];
    if (b.weight == 0.0) return lo;
    const double hi = sorted[static_cast<std::size_t>(b.upper)];
    return lo + b.weight * (hi - lo);
}

double q_lin(double delta, std::span<const double> a) {
    if (a.empty()) throw std::invalid_argument("q_lin: empty score vector");
    std::vector<double> sorted(a.begin(), a.end());
    std::sort(sorted.begin(), sorted.end());
    return q_lin_sorted(delta, sorted);
}

std::vector<Eigen::Index> stable_argsort(const Eigen::VectorXd& values) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return values(a) < values(b); });
    return order;
}

namespace {

double q_lin_of(double delta, const Eigen::VectorXd& scores) {
    return q_lin(delta, std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
}

}  // namespace

Eigen::VectorXd residuals(const Dataset& cal_data, const PosteriorState& regressor) {
    return cal_data.targets - regressor.means(cal_data.inputs);
}

Eigen::VectorXd z_scores(const Eigen::VectorXd& res, const Eigen::VectorXd& sigmas) {
    if (res.size() != sigmas.size()) throw std::invalid_argument("z_scores: length mismatch");
    if ((sigmas.array() <= 0.0).any()) throw std::invalid_argument("z_scores: sigmas must be positive");
    return res.cwiseQuotient(sigmas);
}

Eigen::VectorXd calibration_stddevs(const Hyperparameters& theta,
                                    const Eigen::MatrixXd& train_inputs,
                                    double sigma0,
                                    const Eigen::MatrixXd& queries) {
    const PosteriorState state(train_inputs, Eigen::VectorXd::Zero(train_inputs.rows()), theta, sigma0);
    return state.stddevs(queries);
}

double beta_of(double delta, const Hyperparameters& theta, const Dataset& cal_data,
               const PosteriorState& regressor) {
    const Eigen::VectorXd sig =
        calibration_stddevs(theta, regressor.inputs(), regressor.noise_std(), cal_data.inputs);
    return q_lin_of(delta, z_scores(residuals(cal_data, regressor), sig));
}

double sharpness_loss(double delta, const Hyperparameters& theta, const Dataset& cal_data,
                      const PosteriorState& regressor) {
    const Eigen::VectorXd sig =
        calibration_stddevs(theta, regressor.inputs(), regressor.noise_std(), cal_data.inputs);
    const double beta = q_lin_of(delta, z_scores(residuals(cal_data, regressor), sig));
    return beta * beta * sig.squaredNorm();
}

// ---------------------------------------------------------------------------
// SharpnessObjective

SharpnessObjective::SharpnessObjective(Eigen::MatrixXd train_inputs, double sigma0,
                                       Eigen::MatrixXd cal_inputs, Eigen::VectorXd cal_residuals)
    : train_inputs_(std::move(train_inputs)),
      sigma0_(sigma0),
      cal_inputs_(std::move(cal_inputs)),
      residuals_(std::move(cal_residuals)) {
    if (cal_inputs_.rows() != residuals_.size() || residuals_.size() < 1) {
        throw std::invalid_argument("SharpnessObjective: calibration inputs and residuals disagree");
    }
    if (cal_inputs_.cols() != train_inputs_.cols()) {
        throw std::invalid_argument("SharpnessObjective: input dimensions disagree");
    }
}

Eigen::VectorXd SharpnessObjective::stddevs(const Hyperparameters& theta) const {
    return calibration_stddevs(theta, train_inputs_, sigma0_, cal_inputs_);
}

double SharpnessObjective::beta(double delta, const Hyperparameters& theta) const {
    return q_lin_of(delta, z_scores(residuals_, stddevs(theta)));
}

double SharpnessObjective::loss(double delta, const Hyperparameters& theta) const {
    const Eigen::VectorXd sig = stddevs(theta);
    const double b = q_lin_of(delta, z_scores(residuals_, sig));
    return b * b * sig.squaredNorm();
}

double SharpnessObjective::loss_with_gradient(double delta, const Hyperparameters& theta,
                                              Eigen::VectorXd& grad) const {
    const Eigen::Index n = train_inputs_.rows();
    const Eigen::Index m = cal_inputs_.rows();
    const Eigen::Index d = theta.dim();
    const double amp2 = ArdSquaredExponential::prior_variance(theta);
    const double noise2 = sigma0_ * sigma0_;

    const Eigen::MatrixXd k = gram_matrix(theta, train_inputs_);
    Eigen::MatrixXd a = k;
    a.diagonal().array() += noise2;
    const Eigen::MatrixXd chol = robust_cholesky(a);
    const Eigen::MatrixXd kc = cross_covariance(theta, cal_inputs_, train_inputs_);  // m x n
    Eigen::MatrixXd v = chol.triangularView<Eigen::Lower>().solve(kc.transpose());  // L^{-1} Kc^T
    const Eigen::VectorXd var =
        (amp2 - v.colwise().squaredNorm().transpose().array()).max(0.0).matrix().array() + noise2;
    const Eigen::VectorXd sig = var.array().sqrt().matrix();
    chol.triangularView<Eigen::Lower>().transpose().solveInPlace(v);  // now A^{-1} Kc^T

    const Eigen::VectorXd z = residuals_.cwiseQuotient(sig);
    const std::vector<Eigen::Index> order = stable_argsort(z);
    const QlinBracket br = q_lin_bracket(delta, m);
    const Eigen::Index ia = order[static_cast<std::size_t>(br.lower)];
    const Eigen::Index ib = order[static_cast<std::size_t>(br.upper)];
    const double beta = (1.0 - br.weight) * z(ia) + br.weight * z(ib);
    const double s = var.sum();
    const double value = beta * beta * s;

    // dL/dsigma_i, then c_i = (dL/dsigma_i) / (2 sigma_i) = dL/dsigma_i^2.
    Eigen::VectorXd h = 2.0 * beta * beta * sig;
    h(ia) -= 2.0 * beta * s * (1.0 - br.weight) * z(ia) / sig(ia);
    h(ib) -= 2.0 * beta * s * br.weight * z(ib) / sig(ib);
    const Eigen::VectorXd c = h.cwiseQuotient(2.0 * sig);

    // d sigma_i^2 = dk** - 2 v_i^T dk_i + v_i^T dK v_i, summed against c:
    //   sum_i c_i dk**  - 2 sum_ij P_ij (dKc_ij / Kc_ij)  + sum_jl (K o M)_jl (dK_jl / K_jl)
    // with P_ij = c_i v_ji Kc_ij and M = V diag(c) V^T.
    const Eigen::MatrixXd p = (c.asDiagonal() * v.transpose()).cwiseProduct(kc);  // m x n
    const Eigen::MatrixXd mm = v * c.asDiagonal() * v.transpose();                 // n x n
    const Eigen::MatrixXd km = k.cwiseProduct(mm);

    grad.resize(d + 1);
    grad(0) = 2.0 * amp2 * c.sum() - 4.0 * p.sum() + 2.0 * km.sum();
    const Eigen::VectorXd inv_ls = theta.inv_lengthscales();
    for (Eigen::Index dim = 0; dim < d; ++dim) {
        const double sd = inv_ls(dim);
        double cross_term = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double xj = train_inputs_(j, dim);
            for (Eigen::Index i = 0; i < m; ++i) {
                const double u = (cal_inputs_(i, dim) - xj) * sd;
                cross_term += p(i, j) * u * u;
            }
        }
        double train_term = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index l = 0; l < j; ++l) {
                const double u = (train_inputs_(j, dim) - train_inputs_(l, dim)) * sd;
                train_term += km(j, l) * u * u;
            }
        }
        // dKc/dlog s = -Kc u^2, dK/dlog s = -K u^2; train pairs counted twice.
        grad(dim + 1) = 2.0 * cross_term - 2.0 * train_term;
    }
    return value;
}

// ---------------------------------------------------------------------------
// Per-level searches

namespace {

struct Candidate {
    Hyperparameters theta;
    double loss = std::numeric_limits<double>::infinity();
    bool warning = false;
};

double safe_loss(const SharpnessObjective& obj, double delta, const Hyperparameters& theta) {
    try {
        const double v = obj.loss(delta, theta);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
    }
}

// Coordinates are kept inside a generous box so the kernel stays representable.
constexpr double kLogBound = 12.0;

bool in_box(const Hyperparameters& theta) {
    return std::abs(theta.log_amplitude) <= kLogBound &&
           (theta.log_inv_lengthscales.array().abs() <= kLogBound).all();
}

/// Minimizes over a scalar parameter t in [lo, hi] via a coarse scan followed
/// by Brent refinement around the best scan point.
template <class Map>
Candidate scalar_search(const SharpnessObjective& obj, double delta, double lo, double hi, Map to_theta) {
    constexpr int kScan = 16;
    std::vector<double> ts(kScan + 1), fs(kScan + 1);
    int best = 0;
    for (int i = 0; i <= kScan; ++i) {
        ts[i] = lo + (hi - lo) * i / kScan;
        const Hyperparameters th = to_theta(ts[i]);
        fs[i] = in_box(th) ? safe_loss(obj, delta, th) : std::numeric_limits<double>::infinity();
        if (fs[i] < fs[best]) best = i;
    }
    Candidate out{to_theta(ts[best]), fs[best], !std::isfinite(fs[best])};
    const double a = ts[std::max(best - 1, 0)];
    const double b = ts[std::min(best + 1, kScan)];
    if (b > a && std::isfinite(fs[best])) {
        std::uintmax_t iters = 60;
        const auto f = [&](double t) {
            const Hyperparameters th = to_theta(t);
            return in_box(th) ? safe_loss(obj, delta, th) : std::numeric_limits<double>::infinity();
        };
        const auto [t_star, f_star] = boost::math::tools::brent_find_minima(f, a, b, 30, iters);
        if (f_star < out.loss) out = {to_theta(t_star), f_star, false};
    }
    return out;
}

/// theta = start.scaled(u), u in [-range, range].
Candidate search_rescaling(const SharpnessObjective& obj, double delta, const Hyperparameters& start,
                           double range) {
    return scalar_search(obj, delta, -range, range, [&](double u) { return start.scaled(u); });
}

/// Unconstrained gradient search over log theta.
Candidate search_free(const SharpnessObjective& obj, double delta, const Hyperparameters& start,
                      const CalibrationConfig& cfg) {
    const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        const Hyperparameters th = Hyperparameters::from_vector(x);
        if (!in_box(th)) return std::numeric_limits<double>::infinity();
        try {
            if (grad) return obj.loss_with_gradient(delta, th, *grad);
            return obj.loss(delta, th);
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    MinimizeOptions opts;
    opts.max_iterations = cfg.max_iterations;
    opts.relative_tolerance = cfg.relative_tolerance;
    opts.gradient_tolerance = 1e-10;
    const MinimizeResult r = minimize_lbfgs(f, start.to_vector(), opts);
    if (r.failed) return {start, std::numeric_limits<double>::infinity(), true};
    return {Hyperparameters::from_vector(r.x), r.value, !r.converged};
}

/// theta = base + exp(rho) componentwise in log space, so theta >= base.
Candidate search_increment_free(const SharpnessObjective& obj, double delta, const Hyperparameters& base,
                                const CalibrationConfig& cfg) {
    const Eigen::VectorXd b = base.to_vector();
    const auto to_theta = [&](const Eigen::VectorXd& rho) {
        return Hyperparameters::from_vector(b + rho.array().exp().matrix());
    };
    const Objective f = [&](const Eigen::VectorXd& rho, Eigen::VectorXd* grad) {
        if ((rho.array() > std::log(2.0 * kLogBound)).any()) return std::numeric_limits<double>::infinity();
        const Hyperparameters th = to_theta(rho);
        if (!in_box(th)) return std::numeric_limits<double>::infinity();
        try {
            if (grad) {
                Eigen::VectorXd g;
                const double v = obj.loss_with_gradient(delta, th, g);
                *grad = g.cwiseProduct(rho.array().exp().matrix());
                return v;
            }
            return obj.loss(delta, th);
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    MinimizeOptions opts;
    opts.max_iterations = cfg.max_iterations;
    opts.relative_tolerance = cfg.relative_tolerance;
    opts.gradient_tolerance = 1e-10;
    const Eigen::VectorXd rho0 = Eigen::VectorXd::Constant(b.size(), std::log(0.02));
    const MinimizeResult r = minimize_lbfgs(f, rho0, opts);
    if (r.failed) return {base, std::numeric_limits<double>::infinity(), true};
    return {to_theta(r.x), r.value, !r.converged};
}

/// Best level search starting from `start` with no ordering constraint.
Candidate search_level(const SharpnessObjective& obj, double delta, const Hyperparameters& start,
                       const CalibrationConfig& cfg) {
    Candidate best{start, safe_loss(obj, delta, start), false};
    const Candidate scaled = search_rescaling(obj, delta, start, cfg.log_scale_range);
    if (scaled.loss < best.loss) best = scaled;
    if (cfg.mode == CalibrationMode::full) {
        const Candidate free = search_free(obj, delta, best.theta, cfg);
        if (free.loss < best.loss) best = free;
        else best.warning = best.warning || free.warning;
    }
    return best;
}

/// Best theta >= base for this level.
Candidate search_above(const SharpnessObjective& obj, double delta, const Hyperparameters& base,
                       const Hyperparameters& regressor_theta, const CalibrationConfig& cfg) {
    Candidate best{base, safe_loss(obj, delta, base), false};
    const Hyperparameters lifted = componentwise_max(base, regressor_theta);
    const double lifted_loss = safe_loss(obj, delta, lifted);
    if (lifted_loss < best.loss) best = {lifted, lifted_loss, false};

    const Candidate scaled =
        scalar_search(obj, delta, 0.0, cfg.log_scale_range, [&](double t) { return base.scaled(t); });
    if (scaled.loss < best.loss) best = scaled;
    if (cfg.mode == CalibrationMode::full) {
        const Candidate free = search_increment_free(obj, delta, base, cfg);
        if (free.loss < best.loss) best = free;
    }
    return best;
}

Eigen::MatrixXd leading_rows(const Eigen::MatrixXd& m, std::optional<Eigen::Index> cap) {
    if (!cap || *cap >= m.rows()) return m;
    if (*cap < 1) throw std::invalid_argument("subset cap must be positive");
    return m.topRows(*cap);
}

}  // namespace

CalibrationLevel calibrate_single(double delta, const Hyperparameters& init_theta,
                                  const Dataset& cal_data, const PosteriorState& regressor,
                                  const CalibrationConfig& config) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("calibrate_single: delta must lie in (0, 1)");
    if (init_theta.dim() != cal_data.dim()) throw std::invalid_argument("calibrate_single: dimension mismatch");
    const Eigen::VectorXd res = residuals(cal_data, regressor);
    const SharpnessObjective full(regressor.inputs(), regressor.noise_std(), cal_data.inputs, res);
    const SharpnessObjective search(leading_rows(regressor.inputs(), config.subset_cap),
                                    regressor.noise_std(), cal_data.inputs, res);

    Candidate best = search_level(search, delta, init_theta, config);
    CalibrationLevel level;
    level.delta = delta;
    level.warning = best.warning;
    const double init_loss = full.loss(delta, init_theta);
    double best_loss = full.loss(delta, best.theta);
    if (!(best_loss <= init_loss)) {
        best.theta = init_theta;
        best_loss = init_loss;
    }
    level.theta = best.theta;
    level.beta = full.beta(delta, best.theta);
    level.loss = best_loss;
    return level;
}

std::vector<double> theorem_grid(Eigen::Index n_cal) {
    if (n_cal < 1) throw std::invalid_argument("theorem_grid: need at least one calibration point");
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n_cal));
    for (Eigen::Index j = 1; j <= n_cal; ++j) {
        grid.push_back(static_cast<double>(j) / static_cast<double>(n_cal + 1));
    }
    return grid;
}

std::vector<double> theorem_grid(Eigen::Index n_cal, std::size_t cap) {
    if (cap == 0 || static_cast<std::size_t>(n_cal) <= cap) return theorem_grid(n_cal);
    std::vector<double> grid;
    Eigen::Index last = 0;
    for (std::size_t k = 1; k <= cap; ++k) {
        auto j = static_cast<Eigen::Index>(std::llround(static_cast<double>(k) * static_cast<double>(n_cal + 1) /
                                                        static_cast<double>(cap + 1)));
        j = std::clamp<Eigen::Index>(j, 1, n_cal);
        if (j > last) {
            grid.push_back(static_cast<double>(j) / static_cast<double>(n_cal + 1));
            last = j;
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// calibrate_all

namespace {

void repair_ordering(std::vector<CalibrationLevel>& levels, std::ptrdiff_t center_neg, std::ptrdiff_t center_pos,
                     const SharpnessObjective& full) {
    const auto n = static_cast<std::ptrdiff_t>(levels.size());
    const auto reuse = [&](std::ptrdiff_t j, std::ptrdiff_t from) {
        levels[j].theta = levels[from].theta;
        levels[j].beta = full.beta(levels[j].delta, levels[j].theta);
        levels[j].loss = full.loss(levels[j].delta, levels[j].theta);
        levels[j].reused_neighbour = true;
    };
    if (center_neg >= 0 && center_pos < n) {
        const CalibrationLevel& lo = levels[center_neg];
        const CalibrationLevel& hi = levels[center_pos];
        const bool bad = lo.beta > hi.beta || (lo.beta >= 0.0 && !componentwise_leq(lo.theta, hi.theta)) ||
                         (hi.beta <= 0.0 && !componentwise_leq(hi.theta, lo.theta));
        if (bad) reuse(center_neg, center_pos);
    }
    for (std::ptrdiff_t j = center_pos + 1; j < n; ++j) {
        if (j < 1) continue;
        const CalibrationLevel& prev = levels[j - 1];
        if (levels[j].beta < prev.beta || !componentwise_leq(prev.theta, levels[j].theta)) reuse(j, j - 1);
    }
    for (std::ptrdiff_t j = center_neg - 1; j >= 0; --j) {
        const CalibrationLevel& next = levels[j + 1];
        if (levels[j].beta > next.beta || !componentwise_leq(next.theta, levels[j].theta)) reuse(j, j + 1);
    }
}

}  // namespace

CalibrationModel calibrate_all(const std::vector<double>& deltas, const Dataset& cal_data,
                               std::shared_ptr<const PosteriorState> regressor,
                               const CalibrationConfig& config) {
    if (!regressor) throw std::invalid_argument("calibrate_all: missing regressor");
    if (deltas.empty()) throw std::invalid_argument("calibrate_all: empty confidence grid");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0 && deltas[i] < 1.0)) {
            throw std::invalid_argument("calibrate_all: confidence levels must lie in (0, 1)");
        }
        if (i > 0 && !(deltas[i] > deltas[i - 1])) {
            throw std::invalid_argument("calibrate_all: confidence levels must be strictly increasing");
        }
    }
    if (cal_data.dim() != regressor->inputs().cols()) {
        throw std::invalid_argument("calibrate_all: calibration data dimension mismatch");
    }

    const Eigen::VectorXd res = residuals(cal_data, *regressor);
    const SharpnessObjective full(regressor->inputs(), regressor->noise_std(), cal_data.inputs, res);
    const SharpnessObjective search(leading_rows(regressor->inputs(), config.subset_cap),
                                    regressor->noise_std(), cal_data.inputs, res);
    const Hyperparameters& theta_r = regressor->theta();

    // beta < 0 exactly for the levels below the median of the residual signs;
    // the sign pattern barely depends on theta, so theta_R decides the split.
    const Eigen::VectorXd z_r = z_scores(res, full.stddevs(theta_r));
    const auto n = static_cast<std::ptrdiff_t>(deltas.size());
    std::ptrdiff_t negatives = 0;
    while (negatives < n && q_lin_of(deltas[negatives], z_r) < 0.0) ++negatives;
    const std::ptrdiff_t center_neg = negatives - 1;
    const std::ptrdiff_t center_pos = negatives;

    // Unconstrained optimum of every level, started from theta_R.
    std::vector<Candidate> optimum(deltas.size());
    for (std::ptrdiff_t j = 0; j < n; ++j) optimum[j] = search_level(search, deltas[j], theta_r, config);

    // Lower envelope on each side: the componentwise minimum of the optima
    // further out. Inner levels have small |beta| and hence little loss at
    // stake, so they start low enough not to block the outer levels.
    std::vector<Hyperparameters> envelope(deltas.size());
    for (std::ptrdiff_t j = n - 1; j >= center_pos && j >= 0; --j) {
        envelope[j] = j == n - 1 ? optimum[j].theta : componentwise_min(optimum[j].theta, envelope[j + 1]);
    }
    for (std::ptrdiff_t j = 0; j <= center_neg; ++j) {
        envelope[j] = j == 0 ? optimum[j].theta : componentwise_min(optimum[j].theta, envelope[j - 1]);
    }

    std::vector<CalibrationLevel> levels(deltas.size());
    const auto finish = [&](std::ptrdiff_t j, const Candidate& c) {
        levels[j].delta = deltas[j];
        levels[j].theta = c.theta;
        levels[j].warning = c.warning || optimum[j].warning;
        levels[j].beta = full.beta(deltas[j], c.theta);
    };
    // Searches run on the capped objective; the pick among candidates and the
    // ordering checks use the full training set.
    const auto consider = [&](Candidate& best, std::ptrdiff_t j, const Hyperparameters& theta) {
        const double loss = safe_loss(full, deltas[j], theta);
        if (loss < best.loss) best = {theta, loss, false};
    };

    for (std::ptrdiff_t j : {center_pos, center_neg}) {
        if (j < 0 || j >= n) continue;
        const std::ptrdiff_t outer = j == center_pos ? j + 1 : j - 1;
        const auto cap = [&](const Hyperparameters& theta) {
            return outer >= 0 && outer < n ? componentwise_min(theta, envelope[outer]) : theta;
        };
        Candidate c;
        consider(c, j, envelope[j]);
        consider(c, j, cap(optimum[j].theta));
        consider(c, j, cap(theta_r));
        finish(j, c);
    }

    // Outward chains: theta only grows as |beta| grows. Larger theta widens
    // sigma and so shrinks |beta|; among the candidates the best one that
    // keeps both orderings wins, with the neighbour's theta as the fallback.
    const auto step = [&](std::ptrdiff_t j, std::ptrdiff_t inner) {
        const Hyperparameters& base = levels[inner].theta;
        const double bound = levels[inner].beta;
        const bool upper = j > inner;
        Candidate best{base, safe_loss(full, deltas[j], base), false};
        const auto consider = [&](const Hyperparameters& theta) {
            const double loss = safe_loss(full, deltas[j], theta);
            if (!(loss < best.loss)) return;
            const double beta = full.beta(deltas[j], theta);
            if (upper ? beta >= bound : beta <= bound) best = {theta, loss, false};
        };
        // Candidates stay below the envelope of the levels further out.
        const std::ptrdiff_t outer = upper ? j + 1 : j - 1;
        const auto clip = [&](const Hyperparameters& theta) {
            const Hyperparameters capped =
                outer >= 0 && outer < n ? componentwise_min(theta, envelope[outer]) : theta;
            return componentwise_max(base, capped);
        };
        const Hyperparameters own = clip(optimum[j].theta);
        consider(own);
        consider(clip(envelope[j]));
        consider(clip(theta_r));
        for (int k = 1; k < 8; ++k) consider(interpolate(base, own, k / 8.0));
        if (!(own == optimum[j].theta)) consider(clip(search_above(search, deltas[j], base, theta_r, config).theta));
        finish(j, best);
        levels[j].reused_neighbour = best.theta == base;
    };
    for (std::ptrdiff_t j = center_pos + 1; j < n; ++j) {
        if (j >= 1) step(j, j - 1);
    }
    for (std::ptrdiff_t j = center_neg - 1; j >= 0; --j) step(j, j + 1);

    // Stored betas always come from the full training set.
    for (CalibrationLevel& level : levels) {
        level.beta = full.beta(level.delta, level.theta);
        level.loss = full.loss(level.delta, level.theta);
    }
    repair_ordering(levels, center_neg, center_pos, full);
    return CalibrationModel(std::move(regressor), std::move(levels), res);
}

// ---------------------------------------------------------------------------
// CalibrationModel

CalibrationModel::CalibrationModel(std::shared_ptr<const PosteriorState> regressor,
                                   std::vector<CalibrationLevel> levels,
                                   Eigen::VectorXd cal_residuals)
    : regressor_(std::move(regressor)),
      levels_(std::move(levels)),
      cal_residuals_(std::move(cal_residuals)),
      cache_(std::make_shared<Cache>()) {
    if (!regressor_) throw std::invalid_argument("CalibrationModel: missing regressor");
    if (levels_.empty()) throw std::invalid_argument("CalibrationModel: no calibration levels");
    const auto level_error = [](std::size_t j, const std::string& why) {
        std::ostringstream msg;
        msg << "calibration level " << j << ": " << why;
        return std::invalid_argument(msg.str());
    };
    for (std::size_t j = 0; j < levels_.size(); ++j) {
        const CalibrationLevel& l = levels_[j];
        if (!(l.delta > 0.0 && l.delta < 1.0)) throw level_error(j, "delta outside (0, 1)");
        if (!std::isfinite(l.beta) || !l.theta.all_finite()) throw level_error(j, "non-finite parameters");
        if (l.theta.dim() != regressor_->inputs().cols()) throw level_error(j, "dimension mismatch");
        if (j == 0) continue;
        const CalibrationLevel& p = levels_[j - 1];
        if (!(l.delta > p.delta)) throw level_error(j, "deltas not strictly increasing");
        if (l.beta < p.beta) throw level_error(j, "beta decreases");
        if (p.beta >= 0.0 && !componentwise_leq(p.theta, l.theta)) {
            throw level_error(j, "theta must not decrease where beta >= 0");
        }
        if (l.beta <= 0.0 && !componentwise_leq(l.theta, p.theta)) {
            throw level_error(j, "theta must not increase where beta <= 0");
        }
    }

    for (std::size_t j = 0; j < levels_.size(); ++j) {
        const CalibrationLevel& l = levels_[j];
        knots_.push_back({l.delta, l.beta, l.theta});
        if (j + 1 < levels_.size()) {
            const CalibrationLevel& r = levels_[j + 1];
            if (l.beta < 0.0 && r.beta > 0.0) {
                const double t = -l.beta / (r.beta - l.beta);
                const double d0 = l.delta + t * (r.delta - l.delta);
                if (d0 > l.delta && d0 < r.delta) {
                    zero_crossing_ = ZeroCrossing{d0, componentwise_min(l.theta, r.theta)};
                    knots_.push_back({d0, 0.0, zero_crossing_->theta});
                }
            }
        }
    }
    cache_->states.resize(knots_.size());
}

std::pair<double, double> CalibrationModel::delta_range() const {
    return {knots_.front().delta, knots_.back().delta};
}

std::size_t CalibrationModel::clamp_count() const {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    return cache_->clamps;
}

double CalibrationModel::clamp_delta(double delta) const {
    const auto [lo, hi] = delta_range();
    if (delta < lo || delta > hi) {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        ++cache_->clamps;
        return std::clamp(delta, lo, hi);
    }
    return delta;
}

namespace {

/// Index k with knots[k].delta <= delta <= knots[k+1].delta, and the weight of k+1.
template <class Knots>
std::pair<std::size_t, double> locate(const Knots& knots, double delta) {
    if (delta <= knots.front().delta) return {0, 0.0};
    if (delta >= knots.back().delta) return {knots.size() - 1, 0.0};
    const auto it = std::upper_bound(knots.begin(), knots.end(), delta,
                                     [](double v, const auto& k) { return v < k.delta; });
    const auto k = static_cast<std::size_t>(std::distance(knots.begin(), it)) - 1;
    const double w = (delta - knots[k].delta) / (knots[k + 1].delta - knots[k].delta);
    return {k, w};
}

}  // namespace

double CalibrationModel::beta_hat(double delta) const {
    const auto [k, w] = locate(knots_, delta);
    if (w == 0.0) return knots_[k].beta;
    return (1.0 - w) * knots_[k].beta + w * knots_[k + 1].beta;
}

Hyperparameters CalibrationModel::theta_hat(double delta) const {
    const auto [k, w] = locate(knots_, delta);
    if (w == 0.0) return knots_[k].theta;
    return interpolate(knots_[k].theta, knots_[k + 1].theta, w);
}

std::shared_ptr<const PosteriorState> CalibrationModel::variance_state(const Hyperparameters& theta) const {
    return std::make_shared<const PosteriorState>(
        regressor_->inputs(), Eigen::VectorXd::Zero(regressor_->inputs().rows()), theta, regressor_->noise_std());
}

std::shared_ptr<const PosteriorState> CalibrationModel::variance_state(std::size_t knot) const {
    {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        if (cache_->states[knot]) return cache_->states[knot];
    }
    auto state = variance_state(knots_[knot].theta);
    std::lock_guard<std::mutex> lock(cache_->mutex);
    if (!cache_->states[knot]) cache_->states[knot] = std::move(state);
    return cache_->states[knot];
}

Eigen::VectorXd CalibrationModel::widths(double delta, const Eigen::MatrixXd& inputs) const {
    const double dc = clamp_delta(delta);
    const auto [k, w] = locate(knots_, dc);
    if (w == 0.0) return variance_state(k)->stddevs(inputs);
    return variance_state(interpolate(knots_[k].theta, knots_[k + 1].theta, w))->stddevs(inputs);
}

Eigen::VectorXd CalibrationModel::means(const Eigen::MatrixXd& inputs) const {
    return regressor_->means(inputs);
}

Eigen::VectorXd CalibrationModel::quantiles(double delta, const Eigen::MatrixXd& inputs) const {
    const double dc = clamp_delta(delta);
    return means(inputs) + beta_hat(dc) * widths(dc, inputs);
}

Eigen::MatrixXd CalibrationModel::quantile_table(const std::vector<double>& deltas,
                                                 const Eigen::MatrixXd& inputs) const {
    const Eigen::VectorXd mu = means(inputs);
    Eigen::MatrixXd table(inputs.rows(), static_cast<Eigen::Index>(deltas.size()));
    parallel_for(deltas.size(), [&](std::size_t k) {
        const double dc = clamp_delta(deltas[k]);
        table.col(static_cast<Eigen::Index>(k)) = mu + beta_hat(dc) * widths(dc, inputs);
    });
    return table;
}

double CalibrationModel::offset(double delta, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const auto [k, w] = locate(knots_, delta);
    const Eigen::MatrixXd row = x.transpose();
    if (w == 0.0) return knots_[k].beta * variance_state(k)->stddevs(row)(0);
    const double b = (1.0 - w) * knots_[k].beta + w * knots_[k + 1].beta;
    return b * variance_state(interpolate(knots_[k].theta, knots_[k + 1].theta, w))->stddevs(row)(0);
}

double CalibrationModel::cdf(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
    const double r = y - regressor_->mean(x);
    const auto knot_offset = [&](std::size_t k) { return offset(knots_[k].delta, x); };

    std::size_t lo = 0;
    std::size_t hi = knots_.size() - 1;
    double f_lo = knot_offset(lo) - r;
    if (f_lo >= 0.0) return knots_[lo].delta;
    double f_hi = knot_offset(hi) - r;
    if (f_hi <= 0.0) return knots_[hi].delta;
    // Bisect over knots, where sigma comes from cached factorizations.
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        const double f_mid = knot_offset(mid) - r;
        if (f_mid == 0.0) return knots_[mid].delta;
        if (f_mid < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    const auto g = [&](double d) { return offset(d, x) - r; };
    std::uintmax_t iters = 100;
    const auto [a, b] = boost::math::tools::toms748_solve(g, knots_[lo].delta, knots_[hi].delta, f_lo, f_hi,
                                                          boost::math::tools::eps_tolerance<double>(50), iters);
    return 0.5 * (a + b);
}

std::vector<Eigen::Index> in_sample_counts(const CalibrationModel& model, const Dataset& cal_data) {
    const PosteriorState& reg = model.regressor();
    const Eigen::VectorXd res = residuals(cal_data, reg);
    std::vector<Eigen::Index> counts;
    counts.reserve(model.levels().size());
    for (const CalibrationLevel& level : model.levels()) {
        const Eigen::VectorXd z =
            z_scores(res, calibration_stddevs(level.theta, reg.inputs(), reg.noise_std(), cal_data.inputs));
        counts.push_back((z.array() <= level.beta).count());
    }
    return counts;
}

}  // namespace calgp
