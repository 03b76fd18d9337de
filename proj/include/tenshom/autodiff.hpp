#pragma once

// Table-level reverse-mode differentiation.
//
// Every recorded value is a dense matrix (rows = terms or features, cols =
// quadrature nodes). Primitives are bulk operations with hand-written adjoints,
// so a loss over ~10^6 scalars costs a few dozen tape nodes.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace tenshom {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

namespace ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    [[nodiscard]] bool valid() const noexcept { return tape != nullptr && id >= 0; }
    [[nodiscard]] const Mat& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    [[nodiscard]] double scalar() const;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Mat& out_grad)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Non-differentiable input.
    Var constant(Mat value);
    /// Trainable leaf; gradients accumulate into it during backward().
    Var leaf(Mat value);

    /// Record a derived node. `backward` receives d(root)/d(this node).
    Var record(Mat value, std::vector<int> parents, Backward backward);

    [[nodiscard]] const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    template <class Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g)
    {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) {
            return;
        }
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    /// Reverse sweep from a 1x1 root. Each node is visited at most once.
    void backward(Var root);
    /// Gradient accumulated into `v` by the last backward(); zeros if untouched.
    [[nodiscard]] Mat grad(Var v) const;
    /// Number of nodes whose adjoint was propagated by the last backward().
    [[nodiscard]] std::size_t visited() const noexcept { return visited_; }

private:
    struct Node {
        Mat value;
        Mat grad;
        std::vector<int> parents;
        Backward backward;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
    std::size_t visited_ = 0;
};

// Elementwise and shape-preserving ------------------------------------------------
[[nodiscard]] Var add(Var a, Var b);
[[nodiscard]] Var sub(Var a, Var b);
[[nodiscard]] Var mul(Var a, Var b);
[[nodiscard]] Var scale(Var a, double s);
[[nodiscard]] Var sin(Var a);
[[nodiscard]] Var cos(Var a);
[[nodiscard]] Var square(Var a);
[[nodiscard]] Var sqrt(Var a);
[[nodiscard]] Var reciprocal(Var a);
/// Sum of all entries as a 1x1 node.
[[nodiscard]] Var sum(Var a);

// Layer algebra -------------------------------------------------------------------
/// W * X.
[[nodiscard]] Var matmul(Var w, Var x);
/// X + b * 1^T, b a column.
[[nodiscard]] Var add_colvec(Var x, Var b);
/// diag(s) * X, s an (R x 1) column.
[[nodiscard]] Var row_scale(Var x, Var s);
/// X * diag(v), v constant.
[[nodiscard]] Var col_scale(Var x, const RowVec& v);
/// X * w, w constant: weighted row sums as an (R x 1) column.
[[nodiscard]] Var weighted_row_sums(Var x, const Vec& w);

// Rank bookkeeping ----------------------------------------------------------------
/// Row (ra*Rb + rb) = A.row(ra) .* B.row(rb).
[[nodiscard]] Var row_products(Var a, Var b);
/// Each row repeated k times consecutively.
[[nodiscard]] Var repeat_rows(Var a, Eigen::Index k);
/// The whole block stacked k times.
[[nodiscard]] Var tile_rows(Var a, Eigen::Index k);
[[nodiscard]] Var concat_rows(std::span<const Var> parts);
[[nodiscard]] Var select_rows(Var a, std::span<const Eigen::Index> idx);

/// sum_{r,s} cf_r cg_s prod_i (F_i diag(w_i) G_i^T)[r,s]: the L2 inner product of
/// two separable functions as products of one-dimensional Gauss sums.
[[nodiscard]] Var l2_contract(Var cf, std::span<const Var> ff, Var cg, std::span<const Var> fg,
                              std::span<const Vec> weights);

/// One term coef .* (A^T diag(c) B) of a two-dimensional residual table.
/// An empty coef means all ones.
struct DenseTerm {
    Mat coef;
    Var a;  ///< R x N1
    Var c;  ///< R x 1
    Var b;  ///< R x N2
};

/// sum_ij w1_i w2_j res_ij^2 with res = c0 + sum_q terms[q]. Cost is linear in
/// N1*N2 per unit of rank, which beats the pairwise contraction once the
/// residual rank exceeds the node count.
[[nodiscard]] Var dense_weighted_sq(const Mat& c0, std::span<const DenseTerm> terms, const Vec& w1, const Vec& w2);

}  // namespace ad

// Plain-matrix counterparts with the same names, so separable algebra can be
// written once for both value types.
[[nodiscard]] Mat add(const Mat& a, const Mat& b);
[[nodiscard]] Mat sub(const Mat& a, const Mat& b);
[[nodiscard]] Mat mul(const Mat& a, const Mat& b);
[[nodiscard]] Mat scale(const Mat& a, double s);
[[nodiscard]] Mat matmul(const Mat& w, const Mat& x);
[[nodiscard]] Mat row_scale(const Mat& x, const Mat& s);
[[nodiscard]] Mat col_scale(const Mat& x, const RowVec& v);
[[nodiscard]] Mat weighted_row_sums(const Mat& x, const Vec& w);
[[nodiscard]] Mat row_products(const Mat& a, const Mat& b);
[[nodiscard]] Mat repeat_rows(const Mat& a, Eigen::Index k);
[[nodiscard]] Mat tile_rows(const Mat& a, Eigen::Index k);
[[nodiscard]] Mat concat_rows(std::span<const Mat> parts);
[[nodiscard]] Mat select_rows(const Mat& a, std::span<const Eigen::Index> idx);
[[nodiscard]] double l2_contract_value(const Mat& cf, std::span<const Mat> ff, const Mat& cg,
                                       std::span<const Mat> fg, std::span<const Vec> weights);

/// Residual table c0 + sum_q coef_q .* (A_q^T diag(c_q) B_q) on plain matrices.
struct DenseTermValue {
    Mat coef;
    Mat a;
    Mat c;
    Mat b;
};
[[nodiscard]] Mat dense_residual_table(const Mat& c0, std::span<const DenseTermValue> terms);

// Uniform accessors used by templates.
[[nodiscard]] inline const Mat& values_of(const Mat& m) { return m; }
[[nodiscard]] inline const Mat& values_of(const ad::Var& v) { return v.value(); }
[[nodiscard]] inline Mat make_like(const Mat& /*like*/, Mat m) { return m; }
[[nodiscard]] ad::Var make_like(const ad::Var& like, Mat m);

}  // namespace tenshom
