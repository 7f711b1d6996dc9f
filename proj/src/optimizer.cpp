#include "calgp/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace calgp {

namespace {

struct Pair {
    Eigen::VectorXd s;
    Eigen::VectorXd y;
    double rho;
};

Eigen::VectorXd two_loop(const std::deque<Pair>& memory, const Eigen::VectorXd& grad) {
    Eigen::VectorXd q = grad;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
        alpha[k] = memory[k].rho * memory[k].s.dot(q);
        q -= alpha[k] * memory[k].y;
    }
    if (!memory.empty()) {
        const Pair& last = memory.back();
        q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
        const double beta = memory[k].rho * memory[k].y.dot(q);
        q += (alpha[k] - beta) * memory[k].s;
    }
    return -q;
}

}  // namespace

MinimizeResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& options) {
    MinimizeResult result;
    Eigen::VectorXd grad(x0.size());
    double fx = f(x0, &grad);
    result.x = x0;
    result.value = fx;
    if (!std::isfinite(fx) || !grad.allFinite()) {
        result.failed = true;
        return result;
    }

    std::deque<Pair> memory;
    Eigen::VectorXd x = std::move(x0);
    constexpr double armijo = 1e-4;

    for (int it = 0; it < options.max_iterations; ++it) {
        if (grad.norm() <= options.gradient_tolerance) {
            result.converged = true;
            break;
        }
        Eigen::VectorXd dir = two_loop(memory, grad);
        double slope = dir.dot(grad);
        if (!(slope < 0.0) || !dir.allFinite()) {
            memory.clear();
            dir = -grad;
            slope = -grad.squaredNorm();
        }
        // First step without curvature information is capped to unit length.
        double step = memory.empty() ? std::min(1.0, 1.0 / dir.norm()) : 1.0;

        Eigen::VectorXd x_new;
        Eigen::VectorXd g_new(x.size());
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int h = 0; h < options.max_halvings; ++h) {
            x_new = x + step * dir;
            f_new = f(x_new, &g_new);
            if (std::isfinite(f_new) && g_new.allFinite() && f_new <= fx + armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        result.iterations = it + 1;
        if (!accepted) {
            if (!memory.empty()) {
                // Retry from steepest descent before giving up.
                memory.clear();
                continue;
            }
            break;
        }

        Pair p{x_new - x, g_new - grad, 0.0};
        const double sy = p.s.dot(p.y);
        const double previous = fx;
        x = std::move(x_new);
        grad = g_new;
        fx = f_new;
        if (sy > 1e-12 * p.s.norm() * p.y.norm()) {
            p.rho = 1.0 / sy;
            memory.push_back(std::move(p));
            if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
        }
        if (options.relative_tolerance > 0.0 &&
            std::abs(previous - fx) <= options.relative_tolerance * std::max(std::abs(previous), 1e-300)) {
            result.converged = true;
            break;
        }
    }
    if (grad.norm() <= options.gradient_tolerance) result.converged = true;
    result.x = std::move(x);
    result.value = fx;
    return result;
}

}  // namespace calgp
