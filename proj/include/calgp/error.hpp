#pragma once

#include <stdexcept>
#include <string>

namespace calgp {

/// Raised when a covariance factorization fails even after the jitter ladder
/// is exhausted. Carries the largest jitter that was tried.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double jitter)
        : std::runtime_error(what), jitter_(jitter) {}

    double jitter() const noexcept { return jitter_; }

private:
    double jitter_;
};

/// Every restart of a hyperparameter search failed.
class OptimizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input files or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace calgp
