#pragma once

#include <functional>

#include <Eigen/Core>

namespace calgp {

/// Objective returning f(x); when `grad` is non-null it also fills df/dx.
/// Non-finite values are treated as "outside the domain" by the line search.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct MinimizeOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-5;
    /// Stop when |f_k - f_{k+1}| <= relative_tolerance * max(|f_k|, tiny). 0 disables.
    double relative_tolerance = 0.0;
    int history = 8;
    int max_halvings = 40;
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    /// The starting point itself was not finite.
    bool failed = false;
};

/// Limited-memory BFGS with a step-halving Armijo line search. The returned
/// value never exceeds f(x0).
MinimizeResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& options = {});

}  // namespace calgp
