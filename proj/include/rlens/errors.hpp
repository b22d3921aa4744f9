#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rlens {

/// Bad configuration: invalid values, missing keys, inconsistent combinations.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Missing or malformed input data (datasets, checkpoints, run directories).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered mid-computation. Carries the step index when
/// raised from an iterative optimizer.
struct NumericError : std::runtime_error {
    int step = -1;
    explicit NumericError(const std::string& msg, int step_index = -1)
        : std::runtime_error(msg), step(step_index) {}
};

/// Training ended without reaching the required held-out accuracy. Carries the
/// full loss curve for diagnosis.
struct TrainFailure : std::runtime_error {
    std::vector<double> loss_curve;
    double achieved_accuracy = 0.0;
    TrainFailure(const std::string& msg, std::vector<double> curve, double acc)
        : std::runtime_error(msg), loss_curve(std::move(curve)), achieved_accuracy(acc) {}
};

} // namespace rlens
