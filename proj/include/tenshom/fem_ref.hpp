#pragma once

// Finite-element references: 1D P1 Dirichlet and periodic cell solvers, a 2D
// Q1 Dirichlet solver on tensor meshes, error norms against point
// evaluators, and a small binary cache for reference solutions.

#include "tenshom/coeffs.hpp"
#include "tenshom/quadrature.hpp"

#include <Eigen/Sparse>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tenshom {

struct Mesh1D {
    Interval1D interval;
    int n_el = 0;
    std::vector<double> nodes;

    /// Throws UsageError for n_el < 2.
    static Mesh1D uniform(Interval1D interval, int n_el);
    [[nodiscard]] double h() const { return interval.length() / n_el; }
};

using Fn1 = std::function<double(double)>;
using Fn2 = std::function<double(double, double)>;
/// Symmetric 2x2 coefficient (a11, a12, a22) at a point.
using TensorFn2 = std::function<std::array<double, 3>(double, double)>;

/// Nodal P1 function; evaluation interpolates.
struct P1Function {
    Mesh1D mesh;
    std::vector<double> u;

    [[nodiscard]] double value(double x) const;
    [[nodiscard]] double derivative(double x) const;
};

/// -(a u')' = f on the mesh interval with u = 0 at both ends.
/// Two-point Gauss per element, tridiagonal direct solve.
[[nodiscard]] P1Function solve_dirichlet_1d(const Fn1& a, const Fn1& f, const Mesh1D& mesh);

struct CellSolution1D {
    P1Function chi;          ///< on [0,1], chi(0) = chi(1), discrete mean zero
    double homogenized = 0;  ///< integral of a (1 + chi')
};
/// -(a (chi' + 1))' = 0, periodic on [0,1].
[[nodiscard]] CellSolution1D solve_cell_periodic_1d(const Fn1& a, int n_el);

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Q1System {
    SparseMat K;             ///< interior unknowns only
    Eigen::VectorXd b;
};

struct CgReport {
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Nodal Q1 function on an n x n tensor mesh, nodes row-major with x fastest.
struct Q1Function {
    Interval1D ix;
    Interval1D iy;
    int n = 0;
    std::vector<double> u;   ///< (n+1)^2 nodal values including the boundary
    CgReport report;

    [[nodiscard]] double value(double x, double y) const;
    [[nodiscard]] std::array<double, 2> gradient(double x, double y) const;
};

[[nodiscard]] Q1System assemble_dirichlet_q1_2d(const TensorFn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n);
/// -div(a grad u) = f, u = 0 on the boundary. 2x2 Gauss per element, Jacobi
/// preconditioned CG to `tol` in at most 50 n iterations (ReferenceError otherwise).
[[nodiscard]] Q1Function solve_dirichlet_q1_2d(const TensorFn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n,
                                               double tol = 1e-10);
[[nodiscard]] Q1Function solve_dirichlet_q1_2d(const Fn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n,
                                               double tol = 1e-10);

inline constexpr int kMaxQ1Mesh = 2048;

struct ErrorReport {
    double l2_abs = 0.0;
    double l2_rel = 0.0;
    double h1_abs = 0.0;   ///< seminorm
    double h1_rel = 0.0;
    double ref_l2 = 0.0;
    double ref_h1 = 0.0;
};

/// Candidate value and derivative at x.
using Candidate1D = std::function<std::array<double, 2>(double)>;
/// Candidate value and gradient at (x, y).
using Candidate2D = std::function<std::array<double, 3>(double, double)>;

/// Elementwise Gauss quadrature with `q` points per element and axis.
[[nodiscard]] ErrorReport error_norms(const Candidate1D& cand, const P1Function& ref, int q = 4);
[[nodiscard]] ErrorReport error_norms(const Candidate2D& cand, const Q1Function& ref, int q = 3);

/// Mesh sizes used for references at scale eps.
[[nodiscard]] int mesh_1d_for(double eps, int K);
[[nodiscard]] int mesh_2d_for(double eps);

/// a(x) = A(x, x/eps, ..., x/eps^K) from the closed-form coefficient, entry (i, j).
[[nodiscard]] double oscillating_entry(const TensorCoefficient& c, double eps, std::span<const double> x, int i, int j);

// Binary cache. Layout (little-endian): 8-byte magic "TNHFEM01", u64 key
// length, key bytes, u64 rank, rank x u64 shape, u64 count, count x f64.
void save_reference(const std::string& path, const std::string& key, const std::vector<std::uint64_t>& shape,
                    const std::vector<double>& values);
/// nullopt when the file is missing or was written for another key.
[[nodiscard]] std::optional<std::pair<std::vector<std::uint64_t>, std::vector<double>>> load_reference(
    const std::string& path, const std::string& key);

}  // namespace tenshom
