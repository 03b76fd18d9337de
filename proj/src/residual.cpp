#include "tenshom/residual.hpp"

#include "tenshom/error.hpp"

#include <limits>

namespace tenshom {

bool is_zero(const Separable& f)
{
    return f.rank() == 0 || (f.coeffs.array() == 0.0).all();
}

Separable compress(const Separable& f)
{
    if (f.rank() <= 1) {
        return f;
    }
    if (f.dims.empty()) {
        Separable out = f;
        out.coeffs = Mat::Constant(1, 1, f.coeffs.sum());
        return out;
    }
    if (f.dims.size() == 1) {
        return collapse(f);
    }
    return f;
}

Separable broadcast(const Separable& f, const std::vector<int>& dims)
{
    std::vector<int> missing;
    for (int d : dims) {
        if (!f.has_dim(d)) {
            missing.push_back(d);
        }
    }
    for (int d : f.dims) {
        if (std::find(dims.begin(), dims.end(), d) == dims.end()) {
            throw UsageError("broadcast: function depends on dimension " + std::to_string(d) + " outside the target");
        }
    }
    if (missing.empty()) {
        return f;
    }
    return multiply(f, separable_ones(*f.grid, missing, f.coeffs));
}

ResidualSpec divergence_residual(const SampledCoefficient& a, const std::vector<int>& axis_dims, std::vector<int> dims,
                                 std::optional<Separable> constant)
{
    if (static_cast<int>(axis_dims.size()) != a.d) {
        throw UsageError("divergence_residual: one axis dimension per coefficient row is required");
    }
    std::sort(dims.begin(), dims.end());
    ResidualSpec spec;
    spec.dims = dims;
    for (int i = 0; i < a.d; ++i) {
        for (int k = 0; k < a.d; ++k) {
            const Separable& aik = a.entry(i, k);
            if (is_zero(aik)) {
                continue;
            }
            if (spec.grid == nullptr) {
                spec.grid = aik.grid;
            }
            const Separable da = derivative(aik, axis_dims[static_cast<std::size_t>(i)]);
            if (!is_zero(da)) {
                spec.terms.push_back({compress(da), {axis_dims[static_cast<std::size_t>(k)]}});
            }
            spec.terms.push_back(
                {compress(aik), {axis_dims[static_cast<std::size_t>(k)], axis_dims[static_cast<std::size_t>(i)]}});
        }
    }
    if (constant && !is_zero(*constant)) {
        if (spec.grid == nullptr) {
            spec.grid = constant->grid;
        }
        spec.constant = compress(*constant);
    }
    if (spec.grid == nullptr) {
        throw UsageError("divergence_residual: coefficient is identically zero");
    }
    return spec;
}

RouteCost route_cost(const ResidualSpec& spec, Eigen::Index u_rank)
{
    RouteCost c;
    double r_tot = spec.constant ? static_cast<double>(spec.constant->rank()) : 0.0;
    for (const auto& t : spec.terms) {
        r_tot += static_cast<double>(t.coef.rank()) * static_cast<double>(u_rank);
    }
    double n_sum = 0.0;
    for (int d : spec.dims) {
        n_sum += static_cast<double>(spec.grid->rule(d).size());
    }
    c.separable = 4.0 * r_tot * r_tot * n_sum;
    if (spec.dims.size() == 2) {
        const double n12 = static_cast<double>(spec.grid->rule(spec.dims[0]).size()) *
                           static_cast<double>(spec.grid->rule(spec.dims[1]).size());
        c.dense = n12 * (4.0 + 6.0 * static_cast<double>(u_rank) * static_cast<double>(spec.terms.size()));
    } else {
        c.dense = std::numeric_limits<double>::infinity();
    }
    return c;
}

ResidualAssembler::ResidualAssembler(ResidualSpec spec, Eigen::Index u_rank, LossRoute requested)
    : spec_(std::move(spec))
{
    if (spec_.grid == nullptr) {
        throw UsageError("ResidualAssembler: no grid");
    }
    const RouteCost cost = route_cost(spec_, u_rank);
    switch (requested) {
    case LossRoute::separable:
        route_ = LossRoute::separable;
        break;
    case LossRoute::dense:
        if (spec_.dims.size() != 2) {
            throw ConfigError("dense loss route needs a two-dimensional loss, got " + std::to_string(spec_.dims.size()));
        }
        route_ = LossRoute::dense;
        break;
    case LossRoute::automatic:
        route_ = cost.dense < cost.separable ? LossRoute::dense : LossRoute::separable;
        break;
    }
    if (route_ == LossRoute::dense) {
        const int a = spec_.dims[0];
        const int b = spec_.dims[1];
        c0_ = spec_.constant ? dense_eval_2d(*spec_.constant, a, b)
                             : Mat::Zero(static_cast<Eigen::Index>(spec_.grid->rule(a).size()),
                                         static_cast<Eigen::Index>(spec_.grid->rule(b).size()));
        for (const auto& t : spec_.terms) {
            dense_coef_.push_back(dense_eval_2d(t.coef, a, b));
        }
    }
}

namespace {

template <class T, class Lift>
std::vector<std::pair<double, BasicSeparable<T>>> residual_parts(const ResidualSpec& spec, const BasicSeparable<T>& u,
                                                                 Lift&& lift_fn)
{
    if (u.dims != spec.dims) {
        throw UsageError("residual: unknown spans different dimensions than the loss");
    }
    std::vector<std::pair<double, BasicSeparable<T>>> parts;
    if (spec.constant) {
        parts.emplace_back(1.0, lift_fn(broadcast(*spec.constant, spec.dims)));
    }
    for (const auto& t : spec.terms) {
        BasicSeparable<T> du = u;
        for (int d : t.deriv) {
            du = derivative(du, d);
        }
        if (du.rank() == 0) {
            continue;
        }
        parts.emplace_back(1.0, multiply(lift_fn(t.coef), du, spec.rank_guard));
    }
    return parts;
}

}  // namespace

ad::Var ResidualAssembler::squared(const TapedSeparable& u) const
{
    ad::Tape& tape = *u.coeffs.tape;
    if (route_ == LossRoute::separable) {
        const auto parts = residual_parts(spec_, u, [&](const Separable& f) { return lift(f, tape); });
        if (parts.empty()) {
            return tape.constant(Mat::Zero(1, 1));
        }
        const TapedSeparable r = combine(parts, spec_.rank_guard);
        // One-dimensional residuals fold to a single table, avoiding the
        // cancellation of the pairwise expansion near r = 0.
        if (r.n_dims() == 1) {
            return l2_norm_sq(collapse(r));
        }
        return l2_norm_sq(r);
    }
    if (u.dims != spec_.dims) {
        throw UsageError("residual: unknown spans different dimensions than the loss");
    }
    const int a = spec_.dims[0];
    const int b = spec_.dims[1];
    const Vec w1 = detail::weights_vec(*spec_.grid, a);
    const Vec w2 = detail::weights_vec(*spec_.grid, b);
    std::vector<ad::DenseTerm> terms;
    for (std::size_t q = 0; q < spec_.terms.size(); ++q) {
        TapedSeparable du = u;
        for (int d : spec_.terms[q].deriv) {
            du = derivative(du, d);
        }
        if (du.rank() == 0) {
            continue;
        }
        terms.push_back({dense_coef_[q], du.factors[0].values, du.coeffs, du.factors[1].values});
    }
    if (terms.empty()) {
        Mat v(1, 1);
        v(0, 0) = ((w1 * w2.transpose()).array() * c0_.array().square()).sum();
        return tape.constant(v);
    }
    return ad::dense_weighted_sq(c0_, terms, w1, w2);
}

double ResidualAssembler::squared_value(const Separable& u) const
{
    ad::Tape tape;
    return squared(lift(u, tape)).scalar();
}

Separable ResidualAssembler::residual(const Separable& u) const
{
    const auto parts = residual_parts(spec_, u, [](const Separable& f) { return f; });
    if (parts.empty()) {
        return scaled(broadcast(separable_scalar(*spec_.grid, Mat(), 0.0), spec_.dims), 0.0);
    }
    return combine(parts, spec_.rank_guard);
}

}  // namespace tenshom
