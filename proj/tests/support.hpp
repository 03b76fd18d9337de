#pragma once

// Shared helpers for the test binaries: random separable functions and
// brute-force evaluation that does not go through the library's contractions.

#include "tenshom/quadrature.hpp"
#include "tenshom/separable.hpp"

#include <functional>
#include <random>
#include <vector>

namespace tenshom::testing {

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    return m;
}

/// Grid with `d` slow dims on [0, X] and `d` fast dims per group on [0,1].
inline TensorGrid random_grid(std::mt19937_64& rng, int d, int K, int max_nodes)
{
    std::uniform_int_distribution<int> pts(1, std::max(1, max_nodes / 2));
    std::uniform_int_distribution<int> sub(1, 2);
    std::uniform_real_distribution<double> len(0.5, 3.5);
    std::vector<CompositeGaussRule> rules;
    for (int g = 0; g <= K; ++g) {
        for (int a = 0; a < d; ++a) {
            int s = sub(rng);
            int n = std::min(pts(rng), std::max(1, max_nodes / s));
            const double hi = g == 0 ? len(rng) : 1.0;
            rules.push_back(build_gauss_rule({0.0, hi}, s, n));
        }
    }
    return TensorGrid(d, K, std::move(rules));
}

inline Separable random_separable(std::mt19937_64& rng, const TensorGrid& g, std::vector<int> dims, Eigen::Index rank,
                                  bool derivs = false)
{
    Separable f;
    f.grid = &g;
    f.dims = std::move(dims);
    f.coeffs = random_mat(rng, rank, 1);
    for (int d : f.dims) {
        const auto n = static_cast<Eigen::Index>(g.rule(d).size());
        Factor<Mat> fac{random_mat(rng, rank, n), std::nullopt, std::nullopt};
        if (derivs) {
            fac.d1 = random_mat(rng, rank, n);
            fac.d2 = random_mat(rng, rank, n);
        }
        f.factors.push_back(std::move(fac));
        f.flat.emplace_back(static_cast<std::size_t>(rank), 0);
    }
    return f;
}

/// Value of f at the node multi-index `idx` (indexed by global dim; entries
/// for dims f does not span are ignored). `table` picks values/d1/d2.
inline double eval_at(const Separable& f, const std::vector<Eigen::Index>& idx,
                      const std::function<const Mat&(const Factor<Mat>&)>& table = nullptr)
{
    double v = 0.0;
    for (Eigen::Index r = 0; r < f.rank(); ++r) {
        double t = f.coeffs(r, 0);
        for (std::size_t k = 0; k < f.dims.size(); ++k) {
            const Mat& m = table ? table(f.factors[k]) : f.factors[k].values;
            t *= m(r, idx[static_cast<std::size_t>(f.dims[k])]);
        }
        v += t;
    }
    return v;
}

/// Visit every node multi-index over `dims` with its product weight.
inline void for_each_node(const TensorGrid& g, const std::vector<int>& dims,
                          const std::function<void(const std::vector<Eigen::Index>&, double)>& fn)
{
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(g.total_dims()), 0);
    std::function<void(std::size_t, double)> rec = [&](std::size_t k, double w) {
        if (k == dims.size()) {
            fn(idx, w);
            return;
        }
        const auto& rule = g.rule(dims[k]);
        for (std::size_t n = 0; n < rule.size(); ++n) {
            idx[static_cast<std::size_t>(dims[k])] = static_cast<Eigen::Index>(n);
            rec(k + 1, w * rule.weights()[n]);
        }
    };
    rec(0, 1.0);
}

inline double dense_inner(const Separable& f, const Separable& g)
{
    double s = 0.0;
    for_each_node(*f.grid, f.dims, [&](const auto& idx, double w) { s += w * eval_at(f, idx) * eval_at(g, idx); });
    return s;
}

}  // namespace tenshom::testing
