#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tenshom {

/// Invalid or inconsistent user configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse: mismatched grids, ranks, lengths, out-of-domain points.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Violated numerical assumption that must not happen for valid inputs.
class InternalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Coefficient not uniformly positive where it is required to be.
class EllipticityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimisation failure. Carries the best parameters seen before the failure.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::vector<double> last_good = {})
        : std::runtime_error(what), last_good_(std::move(last_good)) {}

    [[nodiscard]] const std::vector<double>& last_good() const noexcept { return last_good_; }

private:
    std::vector<double> last_good_;
};

/// A TNN factor collapsed to (numerically) zero L2 norm.
class DegenerateFactorError : public TrainingError {
public:
    using TrainingError::TrainingError;
};

/// Failure of a finite-element reference solve. Maps to CLI exit code 4.
class ReferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tenshom
