#pragma once

// Tensor neural networks: one sine subnetwork per coordinate, rank-p assembly
// with L2-normalised factors, and the periodic / mean-zero / Dirichlet
// constraint wrappers.

#include "tenshom/autodiff.hpp"
#include "tenshom/quadrature.hpp"
#include "tenshom/separable.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace tenshom {

struct SubnetworkSpec {
    std::vector<int> hidden{20, 20};
    bool periodic = false;
    /// Integer multiples k of 2*pi for the frozen first layer; empty means 1..hidden[0].
    std::vector<int> frequencies;

    void validate() const;
    [[nodiscard]] std::vector<int> resolved_frequencies() const;
};

/// Layer l maps width(l) -> width(l+1); the last layer is linear with p outputs.
/// For periodic subnets weights[0] holds the frozen 2*pi*k column.
struct Subnetwork {
    SubnetworkSpec spec;
    std::vector<Mat> weights;
    std::vector<Vec> biases;

    [[nodiscard]] bool frozen_weight(std::size_t layer) const noexcept { return spec.periodic && layer == 0; }
};

struct TnnModel {
    std::vector<int> dims;  ///< global grid dimensions, one subnetwork each
    int p = 0;
    std::vector<Subnetwork> subnets;
    Vec c;
    std::uint64_t seed = 0;

    [[nodiscard]] int position(int dim) const;
};

/// Weights uniform in +-1/sqrt(fan_in) (biases likewise, except periodic first
/// layers which draw from [0, 2*pi)); c = 1/sqrt(p).
[[nodiscard]] TnnModel init_model(std::vector<int> dims, const std::vector<SubnetworkSpec>& specs, int p,
                                  std::uint64_t seed);

// Flat parameter layout: c, then for each subnetwork and layer the trainable
// weight matrix (column-major) followed by the bias.
[[nodiscard]] std::size_t n_params(const TnnModel& m);
[[nodiscard]] std::vector<double> get_params(const TnnModel& m);
void set_params(TnnModel& m, std::span<const double> theta);

/// Tape leaves for every parameter block (frozen weights are constants).
struct TnnLeaves {
    ad::Var c;
    std::vector<std::vector<ad::Var>> w;
    std::vector<std::vector<ad::Var>> b;
};
[[nodiscard]] TnnLeaves make_leaves(const TnnModel& m, ad::Tape& tape, bool trainable = true);
/// Gradient in the flat layout after tape.backward().
[[nodiscard]] std::vector<double> gather_gradient(const ad::Tape& tape, const TnnModel& m, const TnnLeaves& leaves);

/// (u, u', u'') of the p outputs at the nodes x, each p x N. Entries beyond
/// `order` are left unbound.
[[nodiscard]] std::array<ad::Var, 3> forward_channels(ad::Tape& tape, const Subnetwork& net,
                                                      const std::vector<ad::Var>& w, const std::vector<ad::Var>& b,
                                                      const Vec& x, int order);
/// Plain counterpart of forward_channels at arbitrary points.
[[nodiscard]] std::array<Mat, 3> subnet_channels(const Subnetwork& net, std::span<const double> x, int order);

/// Smallest factor norm accepted before normalisation.
inline constexpr double kDegenerateNorm = 1e-12;

/// Normalised TNN sampled on the grid: factors divided by their quadrature L2
/// norm (on the tape), coefficients = c.
[[nodiscard]] TapedSeparable eval_factor_tables(const TnnModel& m, const TnnLeaves& leaves, const TensorGrid& grid,
                                                int order);
[[nodiscard]] Separable eval_factor_tables(const TnnModel& m, const TensorGrid& grid, int order);

/// psi - (integral of psi over fast_dims), rank 2p; the subtracted terms are
/// constant (flagged flat) on fast_dims.
template <class T>
BasicSeparable<T> apply_mean_zero(const BasicSeparable<T>& psi, const std::vector<int>& fast_dims)
{
    if (fast_dims.empty()) {
        throw UsageError("apply_mean_zero: no fast dimensions");
    }
    const auto mean = partial_integrate(psi, fast_dims);
    const auto spread = multiply(mean, separable_ones(*psi.grid, fast_dims, psi.coeffs));
    return combine<T>({{1.0, psi}, {-1.0, spread}});
}

/// Per slow dimension i, g_i(x) = sin(pi * t), t = (x - a_i)/(b_i - a_i),
/// evaluated as sin(pi * min(t, 1 - t)) so that both ends give exactly 0.
struct DirichletMask {
    std::vector<int> dims;
    std::vector<Interval1D> intervals;

    [[nodiscard]] std::array<double, 3> eval(std::size_t k, double x) const;
};

template <class T>
BasicSeparable<T> apply_dirichlet_mask(const BasicSeparable<T>& phi, const DirichletMask& mask)
{
    if (phi.dims != mask.dims) {
        throw UsageError("apply_dirichlet_mask: mask dimensions differ from function dimensions");
    }
    BasicSeparable<T> out = phi;
    for (std::size_t k = 0; k < mask.dims.size(); ++k) {
        const auto& x = phi.grid->rule(mask.dims[k]).nodes();
        const auto n = static_cast<Eigen::Index>(x.size());
        RowVec g(n);
        RowVec g1(n);
        RowVec g2(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto e = mask.eval(k, x[static_cast<std::size_t>(i)]);
            g(i) = e[0];
            g1(i) = e[1];
            g2(i) = e[2];
        }
        const auto& src = phi.factors[k];
        auto& dst = out.factors[k];
        dst.values = col_scale(src.values, g);
        if (src.d1) {
            dst.d1 = add(col_scale(*src.d1, g), col_scale(src.values, g1));
            if (src.d2) {
                dst.d2 = add(add(col_scale(*src.d2, g), scale(col_scale(*src.d1, g1), 2.0)), col_scale(src.values, g2));
            } else {
                dst.d2.reset();
            }
        } else {
            dst.d1.reset();
            dst.d2.reset();
        }
        std::fill(out.flat[k].begin(), out.flat[k].end(), std::uint8_t{0});
    }
    return out;
}

/// Closed-form evaluation of a trained (and wrapped) TNN at arbitrary points.
/// Normalisation constants and fast-dimension means are taken from the
/// training grid so that node values agree with eval_factor_tables.
class PointTnn {
public:
    PointTnn() = default;
    PointTnn(TnnModel model, const TensorGrid& grid, std::vector<int> mean_zero_dims = {},
             std::optional<DirichletMask> mask = std::nullopt);

    struct Eval {
        double value = 0.0;
        Vec grad;   ///< partials in model dimension order
        Mat hess;   ///< filled only when requested
    };
    /// `point` holds one coordinate per model dimension (fast ones may be any real).
    [[nodiscard]] Eval eval(std::span<const double> point, bool hessian = false) const;
    [[nodiscard]] double value(std::span<const double> point) const { return eval(point).value; }

    [[nodiscard]] const TnnModel& model() const noexcept { return model_; }
    [[nodiscard]] const std::vector<int>& dims() const noexcept { return model_.dims; }

private:
    TnnModel model_;
    std::vector<Vec> norms_;            ///< per model dim, p entries
    std::vector<int> mean_zero_dims_;
    std::vector<std::uint8_t> is_mean_zero_;  ///< per model dim
    std::vector<Vec> means_;            ///< per model dim (mean-zero dims only), p entries
    std::optional<DirichletMask> mask_;
    std::vector<int> mask_pos_;         ///< mask entry per model dim, or -1
};

[[nodiscard]] nlohmann::json model_to_json(const TnnModel& m);
[[nodiscard]] TnnModel model_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json subnet_spec_to_json(const SubnetworkSpec& s);
[[nodiscard]] SubnetworkSpec subnet_spec_from_json(const nlohmann::json& j);

}  // namespace tenshom
