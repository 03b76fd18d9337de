#pragma once

// Cell problems, corrector training and homogenized coefficients, applied
// from the finest scale group to the coarsest.

#include "tenshom/coeffs.hpp"
#include "tenshom/optim.hpp"
#include "tenshom/residual.hpp"
#include "tenshom/tnn.hpp"

#include <functional>
#include <vector>

namespace tenshom {

/// Cell problem in scale group `fast_group`. The unknown spans the fast group
/// plus every coarser dimension the coefficient depends on; directions in
/// which the coefficient is constant cannot appear in the corrector.
struct CellProblem {
    const TensorGrid* grid = nullptr;
    int d = 1;
    int fast_group = 1;
    std::vector<int> fast_dims;
    std::vector<int> dims;
    SampledCoefficient coeff;
};

[[nodiscard]] CellProblem make_cell_problem(const SampledCoefficient& coeff, const TensorGrid& grid, int fast_group);

/// Residual of direction j: sum_ik [d_i a_ik d_k psi + a_ik d_ik psi] + sum_i d_i a_ij.
[[nodiscard]] ResidualSpec cell_residual(const CellProblem& problem, int j);

/// One subnetwork spec per cell dimension (periodic on every fast dimension).
[[nodiscard]] std::vector<SubnetworkSpec> cell_subnet_specs(const CellProblem& problem, const TrainConfig& cfg);

/// Mean-zero wrapped corrector tables for a model on the cell dimensions.
[[nodiscard]] TapedSeparable wrap_corrector(const CellProblem& problem, const TnnModel& m, const TnnLeaves& leaves);
[[nodiscard]] Separable wrap_corrector(const CellProblem& problem, const TnnModel& m);

/// sqrt of the integral of r^2, on the tape.
[[nodiscard]] ad::Var assemble_cell_loss(const CellProblem& problem, const TapedSeparable& psi_hat, int j,
                                         LossRoute route = LossRoute::automatic);

/// Exactness measures of a wrapped TNN at a checkpoint.
struct StructuralReport {
    double periodicity = 0.0;      ///< max |f(0) - f(1)| over periodic factor tables
    double norm_deviation = 0.0;   ///< max |‖factor‖ - 1|
    double mean_zero = 0.0;        ///< max |mean over fast dims| / ‖psi‖
    double boundary = 0.0;         ///< max |u| at boundary points (masked models)
};
[[nodiscard]] StructuralReport cell_structure(const CellProblem& problem, const TnnModel& m);

struct DirectionSolution {
    int j = 0;
    TnnModel model;
    Separable chi;
    std::vector<TrainRecord> history;
    double loss = 0.0;
    LossRoute route = LossRoute::separable;
    StructuralReport structure;
};

struct CellSolution {
    CellProblem problem;
    std::vector<DirectionSolution> directions;

    /// Closed-form evaluator of chi_j.
    [[nodiscard]] PointTnn evaluator(int j) const;
};

/// Hook called at every logged step: (direction, step, model at that step).
using CheckpointHook = std::function<void(int j, int step, const TnnModel& m)>;

struct TrainOptions {
    bool deterministic = false;
    CheckpointHook hook;
};

/// Trains each direction independently; direction j uses seed cfg.seed + j * 7919.
[[nodiscard]] CellSolution train_cell(const CellProblem& problem, const TrainConfig& cfg,
                                      const TrainOptions& opts = {});

struct HomogenizedCoefficient {
    SampledCoefficient a;          ///< symmetrised, over the cell dims minus the fast group
    std::vector<int> dims;
    double asymmetry = 0.0;        ///< ‖a12 - a21‖ / ‖a‖ before symmetrisation (0 for d = 1)
    EllipticityReport ellipticity;
};

[[nodiscard]] HomogenizedCoefficient compute_homogenized_coefficient(const CellProblem& problem,
                                                                     const CellSolution& solution, double gamma);

struct Homogenization {
    HomogenizedCoefficient a0;
    std::vector<CellSolution> cells;              ///< finest first
    std::vector<HomogenizedCoefficient> stages;   ///< output of each stage, finest first
};

/// `stage_cfg[s]` configures the stage solving in group K - s.
[[nodiscard]] Homogenization homogenize_recursive(const TensorCoefficient& coeff, const TensorGrid& grid,
                                                  const std::vector<TrainConfig>& stage_cfg,
                                                  const TrainOptions& opts = {});

/// Relative discrete L2 deviation of a sampled function from a tabulated oracle on the same nodes.
[[nodiscard]] double relative_l2_error(const Separable& f, const Tabulated& oracle);

}  // namespace tenshom
