#include "tenshom/separable.hpp"

namespace tenshom {

std::vector<double> dense_eval_oracle(const Separable& f)
{
    f.check();
    std::size_t total = 1;
    std::vector<Eigen::Index> n;
    for (const auto& fac : f.factors) {
        n.push_back(fac.values.cols());
        total *= static_cast<std::size_t>(fac.values.cols());
        if (total > kDenseGuard) {
            throw UsageError("dense_eval_oracle: more than " + std::to_string(kDenseGuard) + " nodes");
        }
    }
    std::vector<double> out(total, 0.0);
    std::vector<Eigen::Index> idx(n.size(), 0);
    for (std::size_t flat_i = 0; flat_i < total; ++flat_i) {
        double v = 0.0;
        for (Eigen::Index r = 0; r < f.rank(); ++r) {
            double t = f.coeffs(r, 0);
            for (std::size_t k = 0; k < n.size(); ++k) {
                t *= f.factors[k].values(r, idx[k]);
            }
            v += t;
        }
        out[flat_i] = v;
        for (std::size_t k = n.size(); k-- > 0;) {
            if (++idx[k] < n[k]) {
                break;
            }
            idx[k] = 0;
        }
    }
    return out;
}

Mat dense_eval_2d(const Separable& f, int dim_a, int dim_b)
{
    if (dim_a >= dim_b) {
        throw UsageError("dense_eval_2d: need dim_a < dim_b");
    }
    for (int d : f.dims) {
        if (d != dim_a && d != dim_b) {
            throw UsageError("dense_eval_2d: function depends on dimension " + std::to_string(d));
        }
    }
    const auto na = static_cast<Eigen::Index>(f.grid->rule(dim_a).size());
    const auto nb = static_cast<Eigen::Index>(f.grid->rule(dim_b).size());
    const auto r = f.rank();
    auto table = [&](int d, Eigen::Index n) -> Mat {
        const int p = f.position(d);
        return p < 0 ? Mat::Ones(r, n) : f.factors[static_cast<std::size_t>(p)].values;
    };
    const Mat ta = table(dim_a, na);
    const Mat tb = table(dim_b, nb);
    return ta.transpose() * f.coeffs.col(0).asDiagonal() * tb;
}

}  // namespace tenshom
