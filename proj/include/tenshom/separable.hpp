#pragma once

// Rank-R sums of products of one-dimensional factors tabulated at the nodes of
// a TensorGrid. The same code serves frozen tables (Mat) and taped tables
// (ad::Var); every operation is written against the overload set in
// autodiff.hpp.

#include "tenshom/autodiff.hpp"
#include "tenshom/error.hpp"
#include "tenshom/quadrature.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tenshom {

inline constexpr Eigen::Index kDefaultRankGuard = 5000;

/// Values and (optionally) first/second derivatives of R factors at N nodes.
template <class T>
struct Factor {
    T values;
    std::optional<T> d1;
    std::optional<T> d2;
};

template <class T>
struct BasicSeparable {
    const TensorGrid* grid = nullptr;
    std::vector<int> dims;              ///< ascending global dimension indices
    T coeffs;                           ///< R x 1
    std::vector<Factor<T>> factors;     ///< parallel to dims
    /// flat[k][r] != 0: factor r on dims[k] is constant (its derivative is zero).
    std::vector<std::vector<std::uint8_t>> flat;

    [[nodiscard]] Eigen::Index rank() const { return values_of(coeffs).rows(); }
    [[nodiscard]] std::size_t n_dims() const noexcept { return dims.size(); }
    [[nodiscard]] int position(int dim) const
    {
        const auto it = std::find(dims.begin(), dims.end(), dim);
        return it == dims.end() ? -1 : static_cast<int>(it - dims.begin());
    }
    [[nodiscard]] bool has_dim(int dim) const { return position(dim) >= 0; }

    /// Throws UsageError unless every table has rank R and the node count of its dimension.
    void check() const
    {
        if (grid == nullptr) {
            throw UsageError("separable: no grid attached");
        }
        const auto& c = values_of(coeffs);
        if (c.cols() != 1) {
            throw UsageError("separable: coefficients must be a column");
        }
        if (factors.size() != dims.size() || flat.size() != dims.size()) {
            throw UsageError("separable: factor list does not match dimension list");
        }
        for (std::size_t k = 0; k < dims.size(); ++k) {
            if (k > 0 && dims[k] <= dims[k - 1]) {
                throw UsageError("separable: dimensions must be strictly ascending");
            }
            const auto n = static_cast<Eigen::Index>(grid->rule(dims[k]).size());
            auto ok = [&](const T& t) {
                const auto& m = values_of(t);
                return m.rows() == c.rows() && m.cols() == n;
            };
            const auto& fk = factors[k];
            if (!ok(fk.values) || (fk.d1 && !ok(*fk.d1)) || (fk.d2 && !ok(*fk.d2)) ||
                static_cast<Eigen::Index>(flat[k].size()) != c.rows()) {
                throw UsageError("separable: table shape mismatch on dimension " + std::to_string(dims[k]));
            }
        }
    }
};

using Separable = BasicSeparable<Mat>;
using TapedSeparable = BasicSeparable<ad::Var>;

namespace detail {

inline Vec weights_vec(const TensorGrid& g, int dim)
{
    const auto& w = g.rule(dim).weights();
    return Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
}

inline Vec nodes_vec(const TensorGrid& g, int dim)
{
    const auto& x = g.rule(dim).nodes();
    return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
}

template <class T>
void require_same_grid(const BasicSeparable<T>& f, const BasicSeparable<T>& g, const char* op)
{
    if (f.grid != g.grid) {
        throw UsageError(std::string(op) + ": operands live on different grids");
    }
}

template <class T>
Factor<T> select_factor(const Factor<T>& f, std::span<const Eigen::Index> idx)
{
    Factor<T> out{select_rows(f.values, idx), std::nullopt, std::nullopt};
    if (f.d1) {
        out.d1 = select_rows(*f.d1, idx);
    }
    if (f.d2) {
        out.d2 = select_rows(*f.d2, idx);
    }
    return out;
}

}  // namespace detail

/// Constant function `value` over no dimensions (rank 1).
template <class T>
BasicSeparable<T> separable_scalar(const TensorGrid& grid, const T& like, double value)
{
    BasicSeparable<T> s;
    s.grid = &grid;
    s.coeffs = make_like(like, Mat::Constant(1, 1, value));
    return s;
}

/// Rank-1 constant 1 over `dims`, with zero derivative tables.
template <class T>
BasicSeparable<T> separable_ones(const TensorGrid& grid, std::vector<int> dims, const T& like)
{
    std::sort(dims.begin(), dims.end());
    BasicSeparable<T> s;
    s.grid = &grid;
    s.dims = dims;
    s.coeffs = make_like(like, Mat::Ones(1, 1));
    for (int d : dims) {
        const auto n = static_cast<Eigen::Index>(grid.rule(d).size());
        s.factors.push_back(Factor<T>{make_like(like, Mat::Ones(1, n)), make_like(like, Mat::Zero(1, n)),
                                      make_like(like, Mat::Zero(1, n))});
        s.flat.push_back({1});
    }
    return s;
}

/// Full L2 inner product over the dimensions of f and g (which must agree).
template <class T>
auto l2_inner(const BasicSeparable<T>& f, const BasicSeparable<T>& g)
{
    detail::require_same_grid(f, g, "l2_inner");
    if (f.dims != g.dims) {
        throw UsageError("l2_inner: operands span different dimensions");
    }
    std::vector<T> ff;
    std::vector<T> fg;
    std::vector<Vec> w;
    for (std::size_t k = 0; k < f.dims.size(); ++k) {
        ff.push_back(f.factors[k].values);
        fg.push_back(g.factors[k].values);
        w.push_back(detail::weights_vec(*f.grid, f.dims[k]));
    }
    if constexpr (std::is_same_v<T, Mat>) {
        return l2_contract_value(f.coeffs, ff, g.coeffs, fg, w);
    } else {
        return ad::l2_contract(f.coeffs, ff, g.coeffs, fg, w);
    }
}

/// Squared L2 norm; uses the symmetric fast path of the contraction.
template <class T>
auto l2_norm_sq(const BasicSeparable<T>& f)
{
    return l2_inner(f, f);
}

/// sum_k s_k f_k. All terms must span the same dimensions.
template <class T>
BasicSeparable<T> combine(const std::vector<std::pair<double, BasicSeparable<T>>>& all_terms,
                          Eigen::Index rank_guard = kDefaultRankGuard)
{
    if (all_terms.empty()) {
        throw UsageError("combine: no terms");
    }
    // Rank-0 (identically zero) terms carry no tables worth keeping.
    std::vector<std::pair<double, BasicSeparable<T>>> nonzero;
    for (const auto& t : all_terms) {
        if (t.second.rank() > 0) {
            nonzero.push_back(t);
        }
    }
    const auto& terms = nonzero.empty() ? all_terms : nonzero;
    const auto& first = terms.front().second;
    BasicSeparable<T> out;
    out.grid = first.grid;
    out.dims = first.dims;
    std::vector<T> coeffs;
    Eigen::Index rank = 0;
    for (const auto& [s, f] : terms) {
        detail::require_same_grid(first, f, "combine");
        if (f.dims != first.dims) {
            throw UsageError("combine: terms span different dimensions");
        }
        coeffs.push_back(s == 1.0 ? f.coeffs : scale(f.coeffs, s));
        rank += f.rank();
    }
    if (rank > rank_guard) {
        throw UsageError("combine: rank " + std::to_string(rank) + " exceeds guard " + std::to_string(rank_guard));
    }
    out.coeffs = terms.size() == 1 ? coeffs.front() : concat_rows(std::span<const T>(coeffs));
    for (std::size_t k = 0; k < first.dims.size(); ++k) {
        std::vector<T> v;
        std::vector<T> d1;
        std::vector<T> d2;
        bool has_d1 = true;
        bool has_d2 = true;
        std::vector<std::uint8_t> fl;
        for (const auto& [s, f] : terms) {
            const auto& fk = f.factors[k];
            v.push_back(fk.values);
            has_d1 = has_d1 && fk.d1.has_value();
            has_d2 = has_d2 && fk.d2.has_value();
            if (has_d1) {
                d1.push_back(*fk.d1);
            }
            if (has_d2) {
                d2.push_back(*fk.d2);
            }
            fl.insert(fl.end(), f.flat[k].begin(), f.flat[k].end());
        }
        Factor<T> fac;
        fac.values = terms.size() == 1 ? v.front() : concat_rows(std::span<const T>(v));
        if (has_d1) {
            fac.d1 = terms.size() == 1 ? d1.front() : concat_rows(std::span<const T>(d1));
        }
        if (has_d2) {
            fac.d2 = terms.size() == 1 ? d2.front() : concat_rows(std::span<const T>(d2));
        }
        out.factors.push_back(std::move(fac));
        out.flat.push_back(std::move(fl));
    }
    return out;
}

/// s * f.
template <class T>
BasicSeparable<T> scaled(const BasicSeparable<T>& f, double s)
{
    BasicSeparable<T> out = f;
    out.coeffs = scale(f.coeffs, s);
    return out;
}

/// Pointwise product. Dimensions present on only one side are broadcast; the
/// result has rank R_f * R_g with term index r * R_g + s.
template <class T>
BasicSeparable<T> multiply(const BasicSeparable<T>& f, const BasicSeparable<T>& g,
                           Eigen::Index rank_guard = kDefaultRankGuard)
{
    detail::require_same_grid(f, g, "multiply");
    const auto rf = f.rank();
    const auto rg = g.rank();
    if (rf * rg > rank_guard) {
        throw UsageError("multiply: rank " + std::to_string(rf * rg) + " exceeds guard " +
                         std::to_string(rank_guard));
    }
    BasicSeparable<T> out;
    out.grid = f.grid;
    std::vector<int> dims = f.dims;
    for (int d : g.dims) {
        if (!f.has_dim(d)) {
            dims.push_back(d);
        }
    }
    std::sort(dims.begin(), dims.end());
    out.dims = dims;
    out.coeffs = row_products(f.coeffs, g.coeffs);
    for (int d : dims) {
        const int pf = f.position(d);
        const int pg = g.position(d);
        Factor<T> fac;
        std::vector<std::uint8_t> fl(static_cast<std::size_t>(rf * rg));
        if (pf >= 0 && pg >= 0) {
            const auto& a = f.factors[static_cast<std::size_t>(pf)];
            const auto& b = g.factors[static_cast<std::size_t>(pg)];
            fac.values = row_products(a.values, b.values);
            if (a.d1 && b.d1) {
                fac.d1 = add(row_products(*a.d1, b.values), row_products(a.values, *b.d1));
                if (a.d2 && b.d2) {
                    fac.d2 = add(add(row_products(*a.d2, b.values), scale(row_products(*a.d1, *b.d1), 2.0)),
                                 row_products(a.values, *b.d2));
                }
            }
            for (Eigen::Index r = 0; r < rf; ++r) {
                for (Eigen::Index s = 0; s < rg; ++s) {
                    fl[static_cast<std::size_t>(r * rg + s)] =
                        f.flat[static_cast<std::size_t>(pf)][static_cast<std::size_t>(r)] &&
                        g.flat[static_cast<std::size_t>(pg)][static_cast<std::size_t>(s)];
                }
            }
        } else if (pf >= 0) {
            const auto& a = f.factors[static_cast<std::size_t>(pf)];
            fac.values = repeat_rows(a.values, rg);
            if (a.d1) {
                fac.d1 = repeat_rows(*a.d1, rg);
            }
            if (a.d2) {
                fac.d2 = repeat_rows(*a.d2, rg);
            }
            for (Eigen::Index r = 0; r < rf; ++r) {
                for (Eigen::Index s = 0; s < rg; ++s) {
                    fl[static_cast<std::size_t>(r * rg + s)] =
                        f.flat[static_cast<std::size_t>(pf)][static_cast<std::size_t>(r)];
                }
            }
        } else {
            const auto& b = g.factors[static_cast<std::size_t>(pg)];
            fac.values = tile_rows(b.values, rf);
            if (b.d1) {
                fac.d1 = tile_rows(*b.d1, rf);
            }
            if (b.d2) {
                fac.d2 = tile_rows(*b.d2, rf);
            }
            for (Eigen::Index r = 0; r < rf; ++r) {
                for (Eigen::Index s = 0; s < rg; ++s) {
                    fl[static_cast<std::size_t>(r * rg + s)] =
                        g.flat[static_cast<std::size_t>(pg)][static_cast<std::size_t>(s)];
                }
            }
        }
        out.factors.push_back(std::move(fac));
        out.flat.push_back(std::move(fl));
    }
    return out;
}

/// Integrate out `dims`; the factor integrals are folded into the coefficients.
template <class T>
BasicSeparable<T> partial_integrate(const BasicSeparable<T>& f, const std::vector<int>& dims)
{
    if (dims.empty()) {
        throw UsageError("partial_integrate: empty dimension set");
    }
    for (int d : dims) {
        if (!f.has_dim(d)) {
            throw UsageError("partial_integrate: dimension " + std::to_string(d) + " not present");
        }
    }
    BasicSeparable<T> out;
    out.grid = f.grid;
    out.coeffs = f.coeffs;
    for (std::size_t k = 0; k < f.dims.size(); ++k) {
        const int d = f.dims[k];
        if (std::find(dims.begin(), dims.end(), d) != dims.end()) {
            out.coeffs = mul(out.coeffs, weighted_row_sums(f.factors[k].values, detail::weights_vec(*f.grid, d)));
        } else {
            out.dims.push_back(d);
            out.factors.push_back(f.factors[k]);
            out.flat.push_back(f.flat[k]);
        }
    }
    return out;
}

/// d f / d x_dim. Terms whose factor on `dim` is flagged constant are dropped.
/// Returns a rank-0 function when nothing survives.
template <class T>
BasicSeparable<T> derivative(const BasicSeparable<T>& f, int dim)
{
    const int p = f.position(dim);
    if (p < 0) {
        BasicSeparable<T> z;
        z.grid = f.grid;
        z.dims = f.dims;
        z.coeffs = make_like(f.coeffs, Mat(0, 1));
        for (std::size_t k = 0; k < f.dims.size(); ++k) {
            const auto n = values_of(f.factors[k].values).cols();
            z.factors.push_back(Factor<T>{make_like(f.coeffs, Mat(0, n)), std::nullopt, std::nullopt});
            z.flat.emplace_back();
        }
        return z;
    }
    const auto pk = static_cast<std::size_t>(p);
    if (!f.factors[pk].d1) {
        throw UsageError("derivative: no first-derivative table on dimension " + std::to_string(dim));
    }
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < f.rank(); ++r) {
        if (!f.flat[pk][static_cast<std::size_t>(r)]) {
            keep.push_back(r);
        }
    }
    BasicSeparable<T> out;
    out.grid = f.grid;
    out.dims = f.dims;
    if (static_cast<Eigen::Index>(keep.size()) == f.rank()) {
        out.coeffs = f.coeffs;
        out.factors = f.factors;
        out.flat = f.flat;
    } else {
        out.coeffs = select_rows(f.coeffs, keep);
        for (std::size_t k = 0; k < f.dims.size(); ++k) {
            out.factors.push_back(detail::select_factor(f.factors[k], keep));
            std::vector<std::uint8_t> fl;
            for (auto r : keep) {
                fl.push_back(f.flat[k][static_cast<std::size_t>(r)]);
            }
            out.flat.push_back(std::move(fl));
        }
    }
    auto& fac = out.factors[pk];
    Factor<T> shifted{*fac.d1, fac.d2, std::nullopt};
    fac = std::move(shifted);
    std::fill(out.flat[pk].begin(), out.flat[pk].end(), std::uint8_t{0});
    return out;
}

/// Exact rank-1 representation of a one-dimensional function: the factor is
/// c^T F (and likewise for the derivative tables).
template <class T>
BasicSeparable<T> collapse(const BasicSeparable<T>& f)
{
    if (f.dims.size() != 1) {
        throw UsageError("collapse: only one-dimensional functions can be collapsed");
    }
    const auto r = f.rank();
    const T ones = make_like(f.coeffs, Mat::Ones(1, r));
    auto fold = [&](const T& t) { return matmul(ones, row_scale(t, f.coeffs)); };
    BasicSeparable<T> out;
    out.grid = f.grid;
    out.dims = f.dims;
    out.coeffs = make_like(f.coeffs, Mat::Ones(1, 1));
    const auto& src = f.factors.front();
    Factor<T> fac{fold(src.values), std::nullopt, std::nullopt};
    if (src.d1) {
        fac.d1 = fold(*src.d1);
    }
    if (src.d2) {
        fac.d2 = fold(*src.d2);
    }
    out.factors.push_back(std::move(fac));
    const bool all_flat = std::all_of(f.flat.front().begin(), f.flat.front().end(), [](auto v) { return v != 0; });
    out.flat.push_back({static_cast<std::uint8_t>(all_flat)});
    return out;
}

/// Value of a function over no dimensions.
inline double scalar_value(const Separable& f)
{
    if (!f.dims.empty()) {
        throw UsageError("scalar_value: function still depends on dimensions");
    }
    return f.coeffs.sum();
}

/// Drop the tape: a frozen copy of the current values.
inline Separable freeze(const TapedSeparable& f)
{
    Separable out;
    out.grid = f.grid;
    out.dims = f.dims;
    out.flat = f.flat;
    out.coeffs = f.coeffs.value();
    for (const auto& fac : f.factors) {
        Factor<Mat> m{fac.values.value(), std::nullopt, std::nullopt};
        if (fac.d1) {
            m.d1 = fac.d1->value();
        }
        if (fac.d2) {
            m.d2 = fac.d2->value();
        }
        out.factors.push_back(std::move(m));
    }
    return out;
}

/// Put a frozen function on a tape as constants.
inline TapedSeparable lift(const Separable& f, ad::Tape& tape)
{
    TapedSeparable out;
    out.grid = f.grid;
    out.dims = f.dims;
    out.flat = f.flat;
    out.coeffs = tape.constant(f.coeffs);
    for (const auto& fac : f.factors) {
        Factor<ad::Var> v{tape.constant(fac.values), std::nullopt, std::nullopt};
        if (fac.d1) {
            v.d1 = tape.constant(*fac.d1);
        }
        if (fac.d2) {
            v.d2 = tape.constant(*fac.d2);
        }
        out.factors.push_back(std::move(v));
    }
    return out;
}

/// Maximum number of nodes dense_eval_oracle will expand.
inline constexpr std::size_t kDenseGuard = 1'000'000;

/// Explicit values at every node of the product grid over f.dims, row-major
/// with the last dimension fastest.
std::vector<double> dense_eval_oracle(const Separable& f);

/// Values on the N_a x N_b node product of dims a < b. Dimensions of the grid
/// that f does not depend on are broadcast; f must not depend on others.
Mat dense_eval_2d(const Separable& f, int dim_a, int dim_b);

}  // namespace tenshom
