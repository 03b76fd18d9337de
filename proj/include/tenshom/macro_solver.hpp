#pragma once

// Homogenized Dirichlet problem on the slow dimensions, its TNN solution, and
// the multiscale reconstruction u0 + eps u1 (+ eps^2 u2).

#include "tenshom/coeffs.hpp"
#include "tenshom/homogenize.hpp"
#include "tenshom/optim.hpp"
#include "tenshom/residual.hpp"
#include "tenshom/tnn.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tenshom {

struct MacroProblem {
    const TensorGrid* grid = nullptr;
    int d = 1;
    std::vector<int> dims;   ///< slow dimensions 0..d-1
    SampledCoefficient a0;   ///< over a subset of dims, with derivative tables
    Separable f;
    std::vector<Interval1D> domain;
    DirichletMask mask;
};

/// Throws UsageError when a0 depends on fast dimensions or lives on another grid.
[[nodiscard]] MacroProblem make_macro_problem(const SampledCoefficient& a0, const SeparableExpr& source,
                                              const std::vector<Interval1D>& domain, const TensorGrid& grid);

/// r = sum_ik [d_i a_ik d_k u + a_ik d_ik u] + f over the slow dims.
[[nodiscard]] ResidualSpec macro_residual(const MacroProblem& problem);

/// Dirichlet-masked TNN tables (order 2) for a model on the slow dims.
[[nodiscard]] TapedSeparable wrap_macro(const MacroProblem& problem, const TnnModel& m, const TnnLeaves& leaves);
[[nodiscard]] Separable wrap_macro(const MacroProblem& problem, const TnnModel& m);

/// sqrt of the integral of r^2 over the domain, on the tape.
[[nodiscard]] ad::Var assemble_macro_loss(const MacroProblem& problem, const TapedSeparable& phi_hat,
                                          LossRoute route = LossRoute::automatic);

[[nodiscard]] std::vector<SubnetworkSpec> macro_subnet_specs(const MacroProblem& problem, const TrainConfig& cfg);

struct MacroSolution {
    TnnModel model;
    Separable u0;   ///< masked tables on the training grid
    std::vector<TrainRecord> history;
    double loss = 0.0;
    LossRoute route = LossRoute::separable;
    StructuralReport structure;

    /// Closed-form masked evaluator over the slow dims.
    [[nodiscard]] PointTnn evaluator(const MacroProblem& problem) const;
};

/// Norm deviation of the raw factors and boundary value of the masked evaluator.
[[nodiscard]] StructuralReport macro_structure(const MacroProblem& problem, const TnnModel& m);

/// Seed cfg.seed + 31337.
[[nodiscard]] MacroSolution train_macro(const MacroProblem& problem, const TrainConfig& cfg,
                                        const TrainOptions& opts = {});

/// max |u| over boundary points of the domain (both ends in 1D, 64 points per edge in 2D).
[[nodiscard]] double boundary_deviation(const PointTnn& u, const std::vector<Interval1D>& domain);

/// Gradient of a point evaluator over the slow dims; UsageError outside the domain.
[[nodiscard]] std::vector<double> gradient_field(const PointTnn& u, const std::vector<Interval1D>& domain,
                                                 std::span<const double> x);

/// A0(x) = 1 / integral of 1/A over every fast dimension, with analytic x-derivative
/// tables (d = 1 only). Nested harmonic means reduce to this single integral.
[[nodiscard]] SampledCoefficient harmonic_macro_coefficient(const TensorCoefficient& coeff, const TensorGrid& grid);

class MultiscaleSolution {
public:
    struct Point {
        double u0 = 0.0;
        double u1 = 0.0;
        double u2 = 0.0;
        double u_eps = 0.0;
        std::vector<double> grad;          ///< full chain-rule gradient of u_eps
        std::vector<double> grad_leading;  ///< grad u0 + grad_{y1} u1 (+ grad_{y2} u2)
    };

    /// `correctors` coarsest first: correctors[g-1] solves the cell problem of group g.
    /// Throws UsageError for eps outside (0, 1).
    MultiscaleSolution(const TensorGrid& grid, int d, std::vector<Interval1D> domain, PointTnn u0,
                       std::vector<std::vector<PointTnn>> correctors, double eps);

    [[nodiscard]] Point eval(std::span<const double> x, bool gradients = true) const;
    [[nodiscard]] double epsilon() const noexcept { return eps_; }
    [[nodiscard]] int K() const noexcept { return static_cast<int>(chi_.size()); }
    [[nodiscard]] int d() const noexcept { return d_; }
    [[nodiscard]] const std::vector<Interval1D>& domain() const noexcept { return domain_; }

    /// Uniform plotting grid with `n` points per axis; columns x[,y], u0, u1[, u2], u_eps.
    void write_csv(std::ostream& os, int n) const;
    void write_csv(const std::string& path, int n) const;

private:
    int d_ = 1;
    int total_dims_ = 0;
    std::vector<Interval1D> domain_;
    PointTnn u0_;
    std::vector<std::vector<PointTnn>> chi_;
    double eps_ = 0.1;
};

/// Reconstruction from a macro solution and a homogenization (cells are stored finest first).
[[nodiscard]] MultiscaleSolution reconstruct(const MacroProblem& problem, const MacroSolution& macro,
                                             const Homogenization& hom, double eps);

}  // namespace tenshom
