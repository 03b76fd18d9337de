#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tenshom {

struct Interval1D {
    double lo = 0.0;
    double hi = 1.0;

    [[nodiscard]] double length() const noexcept { return hi - lo; }
    [[nodiscard]] bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

/// Composite Gauss-Legendre rule on equal subintervals of an interval.
///
/// Nodes are strictly increasing and interior; on each subinterval the rule
/// integrates polynomials of degree <= 2*n_pts - 1 exactly.
class CompositeGaussRule {
public:
    CompositeGaussRule() = default;
    CompositeGaussRule(Interval1D interval, int n_sub, int n_pts);

    [[nodiscard]] const Interval1D& interval() const noexcept { return interval_; }
    [[nodiscard]] int n_sub() const noexcept { return n_sub_; }
    [[nodiscard]] int n_pts() const noexcept { return n_pts_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const std::vector<double>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }

private:
    Interval1D interval_{};
    int n_sub_ = 0;
    int n_pts_ = 0;
    std::vector<double> nodes_;
    std::vector<double> weights_;
};

/// Legendre nodes and weights on [-1, 1], ascending. 1 <= n <= 64.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
};
[[nodiscard]] GaussLegendre gauss_legendre(int n);

[[nodiscard]] CompositeGaussRule build_gauss_rule(Interval1D interval, int n_sub, int n_pts);

/// Weighted sum of samples taken at rule.nodes().
[[nodiscard]] double integrate_1d(const CompositeGaussRule& rule, std::span<const double> samples);

/// Role of a coordinate in the (K+1)*d dimensional limit problem.
struct DimLabel {
    int group = 0;  ///< 0 for the slow variable x, k >= 1 for the fast variable y_k
    int axis = 0;   ///< spatial component, 0..d-1

    [[nodiscard]] bool is_fast() const noexcept { return group > 0; }
    [[nodiscard]] std::string name() const;
};

/// One composite Gauss rule per coordinate of Omega x Y_1 x ... x Y_K.
///
/// Dimension index = group * d + axis, so x_1..x_d come first, then y_1, etc.
class TensorGrid {
public:
    TensorGrid() = default;
    TensorGrid(int d, int K, std::vector<CompositeGaussRule> rules);

    [[nodiscard]] int d() const noexcept { return d_; }
    [[nodiscard]] int K() const noexcept { return K_; }
    [[nodiscard]] int total_dims() const noexcept { return static_cast<int>(rules_.size()); }
    [[nodiscard]] const CompositeGaussRule& rule(int dim) const;
    [[nodiscard]] const DimLabel& label(int dim) const;
    [[nodiscard]] int dim_index(int group, int axis) const;
    [[nodiscard]] std::vector<int> group_dims(int group) const;

private:
    int d_ = 0;
    int K_ = 0;
    std::vector<CompositeGaussRule> rules_;
    std::vector<DimLabel> labels_;
};

}  // namespace tenshom
