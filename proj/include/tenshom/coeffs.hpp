#pragma once

// Closed-form separable coefficients, the built-in example problems, and
// the one-dimensional harmonic-mean homogenisation oracle.

#include "tenshom/quadrature.hpp"
#include "tenshom/separable.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace tenshom {

/// One-dimensional factor with closed-form derivatives.
struct Primitive1D {
    enum class Kind { sin_freq, cos_freq, constant, poly };
    Kind kind = Kind::constant;
    double omega = 0.0;          ///< angular frequency for sin_freq / cos_freq
    double value_c = 1.0;        ///< constant value
    std::vector<double> poly;    ///< coefficients a_0, a_1, ... for poly

    static Primitive1D sin_freq(double omega) { return {Kind::sin_freq, omega, 0.0, {}}; }
    static Primitive1D cos_freq(double omega) { return {Kind::cos_freq, omega, 0.0, {}}; }
    static Primitive1D constant(double c) { return {Kind::constant, 0.0, c, {}}; }
    static Primitive1D polynomial(std::vector<double> a) { return {Kind::poly, 0.0, 0.0, std::move(a)}; }

    /// (f, f', f'') at x.
    [[nodiscard]] std::array<double, 3> eval(double x) const;
    [[nodiscard]] bool is_constant() const noexcept { return kind == Kind::constant || (kind == Kind::poly && poly.size() <= 1); }
};

/// scale * prod_k factors[k].second(x_{factors[k].first}); dims not listed contribute 1.
struct ExprTerm {
    double scale = 1.0;
    std::vector<std::pair<int, Primitive1D>> factors;
};

/// Sum of separable terms over global grid dimensions.
struct SeparableExpr {
    std::vector<ExprTerm> terms;

    [[nodiscard]] std::vector<int> dims() const;
    /// Value at a point with one coordinate per global dimension.
    [[nodiscard]] double value(std::span<const double> point) const;
    /// Partial derivative along global dimension `dim`.
    [[nodiscard]] double partial(std::span<const double> point, int dim) const;
    [[nodiscard]] bool depends_on(int dim) const;
};

/// d x d symmetric coefficient with closed-form separable entries.
struct TensorCoefficient {
    int d = 1;
    int K = 1;
    std::vector<SeparableExpr> entries;  ///< row-major d x d
    double gamma = 0.25;

    [[nodiscard]] const SeparableExpr& entry(int i, int j) const
    {
        return entries[static_cast<std::size_t>(i * d + j)];
    }
    [[nodiscard]] std::vector<int> dims() const;
    /// Throws ConfigError unless entries are symmetric expressions.
    void validate() const;
    /// Scalar * identity.
    static TensorCoefficient isotropic(int d, int K, SeparableExpr a, double gamma);
};

/// Coefficient entries sampled on a grid (values, first and second derivative tables).
struct SampledCoefficient {
    int d = 1;
    std::vector<Separable> entries;  ///< row-major d x d

    [[nodiscard]] const Separable& entry(int i, int j) const
    {
        return entries[static_cast<std::size_t>(i * d + j)];
    }
    [[nodiscard]] std::vector<int> dims() const;
};

struct Problem {
    std::string name;
    int d = 1;
    int K = 1;
    TensorCoefficient coeff;
    SeparableExpr source;                 ///< over slow dims
    std::vector<Interval1D> domain;       ///< one interval per slow axis
};

/// ex_1D, ex_2D_1, ex_2D_2, ex_1D_3scale.
[[nodiscard]] Problem builtin(const std::string& name);
[[nodiscard]] std::vector<std::string> builtin_names();

/// Tables of expr on the grid, one factor per dimension the expression uses.
[[nodiscard]] Separable sample_expr(const SeparableExpr& expr, const TensorGrid& grid);
[[nodiscard]] SampledCoefficient sample_coefficient(const TensorCoefficient& coeff, const TensorGrid& grid);

/// Values on the node product of `dims` (row-major, last dim fastest).
struct Tabulated {
    std::vector<int> dims;
    std::vector<Eigen::Index> shape;
    std::vector<double> values;
};

/// 1 / integral of 1/A over every dimension not in keep_dims, at each node of keep_dims.
/// Nested harmonic means of a 1D coefficient collapse to this single integral.
[[nodiscard]] Tabulated harmonic_homogenized_1d(const TensorCoefficient& coeff, const TensorGrid& grid,
                                                const std::vector<int>& keep_dims);

/// Eigenvalues of the entry matrix within [gamma, 1/gamma] at (a subsample of)
/// the grid nodes. Returns the violation count; throws EllipticityError if
/// `throw_on_violation` and any node fails.
struct EllipticityReport {
    std::size_t checked = 0;
    std::size_t violations = 0;
    double min_eig = 0.0;
    double max_eig = 0.0;
};
[[nodiscard]] EllipticityReport check_ellipticity(const TensorCoefficient& coeff, const TensorGrid& grid,
                                                  bool throw_on_violation = true, std::size_t max_points = 200'000);
[[nodiscard]] EllipticityReport check_ellipticity(const SampledCoefficient& coeff, const TensorGrid& grid,
                                                  double gamma, std::size_t max_points = 200'000);

// JSON grammar for user coefficients (see README).
[[nodiscard]] Primitive1D primitive_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json primitive_to_json(const Primitive1D& p);
[[nodiscard]] SeparableExpr expr_from_json(const nlohmann::json& j, int d);
[[nodiscard]] nlohmann::json expr_to_json(const SeparableExpr& e);

/// Global dimension index from a name ("x1", "y1_2", "y2_1") for spatial dimension d.
[[nodiscard]] int dim_from_name(const std::string& name, int d);

}  // namespace tenshom
