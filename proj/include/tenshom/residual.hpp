#pragma once

// Strong-form residuals of divergence-form operators applied to a separable
// unknown, and their squared L2 norms on the tape.

#include "tenshom/autodiff.hpp"
#include "tenshom/coeffs.hpp"
#include "tenshom/optim.hpp"
#include "tenshom/separable.hpp"

#include <optional>
#include <vector>

namespace tenshom {

/// coef * (d/dx_{deriv[0]} d/dx_{deriv[1]} ...) u.
struct ResidualTerm {
    Separable coef;
    std::vector<int> deriv;
};

/// r = constant + sum_q terms[q], integrated over `dims`.
struct ResidualSpec {
    const TensorGrid* grid = nullptr;
    std::vector<int> dims;
    std::optional<Separable> constant;
    std::vector<ResidualTerm> terms;
    Eigen::Index rank_guard = kDefaultRankGuard;
};

/// True when f has no terms or all coefficients are exactly zero.
[[nodiscard]] bool is_zero(const Separable& f);
/// Exact rank reduction for functions of at most one dimension; others are returned unchanged.
[[nodiscard]] Separable compress(const Separable& f);
/// f * 1 over the dims in `dims` that f lacks.
[[nodiscard]] Separable broadcast(const Separable& f, const std::vector<int>& dims);

/// sum_i sum_k [ (d a_ik / d x_{axis_i}) (d u / d x_{axis_k}) + a_ik d^2 u / d x_{axis_k} d x_{axis_i} ] + constant.
/// Zero entries and vanishing derivatives are dropped; coefficient tables are compressed.
[[nodiscard]] ResidualSpec divergence_residual(const SampledCoefficient& a, const std::vector<int>& axis_dims,
                                               std::vector<int> dims, std::optional<Separable> constant);

/// Flop estimates for one loss evaluation; dense is +inf when |dims| != 2.
struct RouteCost {
    double separable = 0.0;
    double dense = 0.0;
};
[[nodiscard]] RouteCost route_cost(const ResidualSpec& spec, Eigen::Index u_rank);

/// Precomputes whatever the chosen route needs (dense coefficient tables).
class ResidualAssembler {
public:
    ResidualAssembler(ResidualSpec spec, Eigen::Index u_rank, LossRoute requested = LossRoute::automatic);

    [[nodiscard]] LossRoute route() const noexcept { return route_; }
    [[nodiscard]] const ResidualSpec& spec() const noexcept { return spec_; }
    /// Integral of r^2 over spec().dims.
    [[nodiscard]] ad::Var squared(const TapedSeparable& u) const;
    [[nodiscard]] double squared_value(const Separable& u) const;
    /// The residual as one separable function (separable route algebra, any size within the guard).
    [[nodiscard]] Separable residual(const Separable& u) const;

private:
    ResidualSpec spec_;
    LossRoute route_ = LossRoute::separable;
    Mat c0_;
    std::vector<Mat> dense_coef_;
};

}  // namespace tenshom
