#pragma once

// First- and quasi-second-order minimisers over a flat parameter vector, with
// best-seen checkpointing and loss-history logging.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tenshom {

/// separable: pairwise contraction of residual terms. dense: tabulate the
/// residual on the node product (two-dimensional losses only). automatic: by
/// estimated cost.
enum class LossRoute { automatic, separable, dense };

[[nodiscard]] std::string to_string(LossRoute r);
[[nodiscard]] LossRoute loss_route_from_string(const std::string& s);

struct TrainConfig {
    enum class Optimizer { adam, adam_then_lbfgs };
    Optimizer optimizer = Optimizer::adam;
    double lr_adam = 1e-2;
    int steps_adam = 5000;
    double lr_lbfgs = 0.1;
    int steps_lbfgs = 0;
    int history = 10;
    std::uint64_t seed = 1;
    int p = 10;
    std::vector<int> widths{20, 20};
    int log_every = 100;
    LossRoute route = LossRoute::automatic;
    /// Frozen first-layer multiples k of 2*pi for periodic subnets. Empty: 1..widths[0].
    /// A single entry is repeated across the first layer.
    std::vector<int> frequencies;

    /// Throws ConfigError.
    void validate() const;
    /// Frequency list of length widths[0], or empty for the subnetwork default.
    [[nodiscard]] std::vector<int> resolved_frequencies() const;
    [[nodiscard]] int lbfgs_steps() const { return optimizer == Optimizer::adam_then_lbfgs ? steps_lbfgs : 0; }
};

struct TrainRecord {
    int step = 0;
    double loss = 0.0;       ///< reported loss (square root of the minimised value)
    double grad_norm = 0.0;  ///< Euclidean norm of the gradient of the minimised value
    double wall_ms = 0.0;
};

/// Value of the minimised objective at theta; writes the gradient into grad.
using Objective = std::function<double(std::span<const double> theta, std::span<double> grad)>;
/// Called at every logged step with the current iterate.
using Observer = std::function<void(int step, std::span<const double> theta)>;

struct OptimResult {
    std::vector<double> best;
    double best_value = 0.0;
    double final_value = 0.0;
    std::vector<TrainRecord> history;
    int evaluations = 0;
    int lbfgs_iterations = 0;
    bool lbfgs_stalled = false;
};

/// Adam (bias-corrected, beta = (0.9, 0.999), eps = 1e-8) for steps_adam, then
/// optionally L-BFGS (two-loop recursion, Armijo backtracking from lr_lbfgs).
/// Returns the best iterate seen. Non-finite values during Adam, or a
/// degenerate factor, raise TrainingError carrying the best iterate.
/// With `deterministic`, wall_ms is recorded as 0.
[[nodiscard]] OptimResult minimize(const Objective& f, std::vector<double> theta0, const TrainConfig& cfg,
                                   bool deterministic = false, const Observer& observer = {});

/// CSV with header step,loss,grad_norm,wall_ms.
void write_loss_csv(std::ostream& os, const std::vector<TrainRecord>& history);
void write_loss_csv(const std::string& path, const std::vector<TrainRecord>& history);

}  // namespace tenshom
