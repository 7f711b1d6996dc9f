#include "calgp/hyperparameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace calgp {

double Hyperparameters::amplitude() const { return std::exp(log_amplitude); }

Eigen::VectorXd Hyperparameters::inv_lengthscales() const {
    return log_inv_lengthscales.array().exp().matrix();
}

Eigen::VectorXd Hyperparameters::lengthscales() const {
    return (-log_inv_lengthscales.array()).exp().matrix();
}

Hyperparameters Hyperparameters::from_natural(double amplitude, const Eigen::VectorXd& lengthscales) {
    if (amplitude <= 0.0 || (lengthscales.array() <= 0.0).any()) {
        throw std::invalid_argument("amplitude and lengthscales must be positive");
    }
    return {std::log(amplitude), (-lengthscales.array().log()).matrix()};
}

Hyperparameters Hyperparameters::from_vector(const Eigen::Ref<const Eigen::VectorXd>& packed) {
    if (packed.size() < 2) {
        throw std::invalid_argument("packed hyperparameters need at least 2 entries");
    }
    return {packed(0), packed.tail(packed.size() - 1)};
}

Eigen::VectorXd Hyperparameters::to_vector() const {
    Eigen::VectorXd packed(size());
    packed(0) = log_amplitude;
    packed.tail(dim()) = log_inv_lengthscales;
    return packed;
}

bool Hyperparameters::all_finite() const {
    return std::isfinite(log_amplitude) && log_inv_lengthscales.allFinite();
}

Hyperparameters Hyperparameters::scaled(double log_factor) const {
    return {log_amplitude + log_factor, (log_inv_lengthscales.array() + log_factor).matrix()};
}

bool operator==(const Hyperparameters& a, const Hyperparameters& b) {
    return a.log_amplitude == b.log_amplitude && a.dim() == b.dim() &&
           a.log_inv_lengthscales == b.log_inv_lengthscales;
}

bool componentwise_leq(const Hyperparameters& lhs, const Hyperparameters& rhs) {
    if (lhs.dim() != rhs.dim()) {
        throw std::invalid_argument("hyperparameter dimension mismatch");
    }
    return lhs.log_amplitude <= rhs.log_amplitude &&
           (lhs.log_inv_lengthscales.array() <= rhs.log_inv_lengthscales.array()).all();
}

Hyperparameters componentwise_min(const Hyperparameters& lhs, const Hyperparameters& rhs) {
    if (lhs.dim() != rhs.dim()) {
        throw std::invalid_argument("hyperparameter dimension mismatch");
    }
    return {std::min(lhs.log_amplitude, rhs.log_amplitude),
            lhs.log_inv_lengthscales.cwiseMin(rhs.log_inv_lengthscales)};
}

Hyperparameters componentwise_max(const Hyperparameters& lhs, const Hyperparameters& rhs) {
    if (lhs.dim() != rhs.dim()) {
        throw std::invalid_argument("hyperparameter dimension mismatch");
    }
    return {std::max(lhs.log_amplitude, rhs.log_amplitude),
            lhs.log_inv_lengthscales.cwiseMax(rhs.log_inv_lengthscales)};
}

Hyperparameters interpolate(const Hyperparameters& from, const Hyperparameters& to, double t) {
    if (t <= 0.0) return from;
    if (t >= 1.0) return to;
    return {(1.0 - t) * from.log_amplitude + t * to.log_amplitude,
            (1.0 - t) * from.log_inv_lengthscales + t * to.log_inv_lengthscales};
}

double ArdSquaredExponential::eval(const Hyperparameters& theta,
                                   const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& x2) {
    // Squared differences are symmetric in (x, x2) so the result is too.
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double u = (x(i) - x2(i)) * std::exp(theta.log_inv_lengthscales(i));
        r2 += u * u;
    }
    return std::exp(2.0 * theta.log_amplitude - 0.5 * r2);
}

double ArdSquaredExponential::prior_variance(const Hyperparameters& theta) {
    return std::exp(2.0 * theta.log_amplitude);
}

double kernel_eval(const Hyperparameters& theta,
                   const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x2) {
    if (x.size() != theta.dim() || x2.size() != theta.dim()) {
        throw std::invalid_argument("kernel_eval: point dimension does not match hyperparameters");
    }
    return ArdSquaredExponential::eval(theta, x, x2);
}

}  // namespace calgp
