#include "tenshom/quadrature.hpp"

#include "tenshom/error.hpp"

#include <cmath>
#include <numbers>

namespace tenshom {

GaussLegendre gauss_legendre(int n)
{
    if (n < 1 || n > 64) {
        throw ConfigError("gauss_legendre: n_pts must lie in [1, 64], got " + std::to_string(n));
    }
    GaussLegendre gl;
    gl.nodes.assign(static_cast<std::size_t>(n), 0.0);
    gl.weights.assign(static_cast<std::size_t>(n), 0.0);

    // Roots come in +/- pairs; compute the positive half and mirror so that
    // the rule is exactly symmetric.
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        bool converged = false;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double pn = (n == 1) ? x : p1;
            const double pnm1 = (n == 1) ? 1.0 : p0;
            dp = n * (x * pn - pnm1) / (x * x - 1.0);
            const double dx = pn / dp;
            x -= dx;
            if (std::abs(dx) <= 1e-15) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            throw InternalError("gauss_legendre: Newton iteration did not converge for n=" + std::to_string(n));
        }
        // Recompute the derivative at the converged root for the weight.
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        const double pn = (n == 1) ? x : p1;
        const double pnm1 = (n == 1) ? 1.0 : p0;
        dp = n * (x * pn - pnm1) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);

        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        if (lo == hi) {
            gl.nodes[lo] = 0.0;
            gl.weights[lo] = w;
        } else {
            gl.nodes[lo] = -x;
            gl.nodes[hi] = x;
            gl.weights[lo] = w;
            gl.weights[hi] = w;
        }
    }
    return gl;
}

CompositeGaussRule::CompositeGaussRule(Interval1D interval, int n_sub, int n_pts)
    : interval_(interval), n_sub_(n_sub), n_pts_(n_pts)
{
    if (!(std::isfinite(interval.lo) && std::isfinite(interval.hi)) || !(interval.lo < interval.hi)) {
        throw ConfigError("CompositeGaussRule: interval must be finite with lo < hi");
    }
    if (n_sub < 1) {
        throw ConfigError("CompositeGaussRule: n_sub must be >= 1");
    }
    const GaussLegendre ref = gauss_legendre(n_pts);
    const double h = interval.length() / n_sub;
    nodes_.reserve(static_cast<std::size_t>(n_sub) * n_pts);
    weights_.reserve(nodes_.capacity());
    for (int s = 0; s < n_sub; ++s) {
        const double a = interval.lo + s * h;
        const double mid = a + 0.5 * h;
        for (int q = 0; q < n_pts; ++q) {
            nodes_.push_back(mid + 0.5 * h * ref.nodes[static_cast<std::size_t>(q)]);
            weights_.push_back(0.5 * h * ref.weights[static_cast<std::size_t>(q)]);
        }
    }
}

CompositeGaussRule build_gauss_rule(Interval1D interval, int n_sub, int n_pts)
{
    return CompositeGaussRule(interval, n_sub, n_pts);
}

double integrate_1d(const CompositeGaussRule& rule, std::span<const double> samples)
{
    if (samples.size() != rule.size()) {
        throw UsageError("integrate_1d: expected " + std::to_string(rule.size()) + " samples, got " +
                         std::to_string(samples.size()));
    }
    double sum = 0.0;
    const auto& w = rule.weights();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        sum += w[i] * samples[i];
    }
    return sum;
}

std::string DimLabel::name() const
{
    if (group == 0) {
        return "x" + std::to_string(axis + 1);
    }
    return "y" + std::to_string(group) + "_" + std::to_string(axis + 1);
}

TensorGrid::TensorGrid(int d, int K, std::vector<CompositeGaussRule> rules)
    : d_(d), K_(K), rules_(std::move(rules))
{
    if (d < 1 || K < 0) {
        throw ConfigError("TensorGrid: need d >= 1 and K >= 0");
    }
    if (static_cast<int>(rules_.size()) != (K + 1) * d) {
        throw ConfigError("TensorGrid: expected " + std::to_string((K + 1) * d) + " rules, got " +
                          std::to_string(rules_.size()));
    }
    for (int g = 0; g <= K; ++g) {
        for (int a = 0; a < d; ++a) {
            labels_.push_back(DimLabel{g, a});
            const auto& iv = rules_[static_cast<std::size_t>(g * d + a)].interval();
            if (g > 0 && (iv.lo != 0.0 || iv.hi != 1.0)) {
                throw ConfigError("TensorGrid: fast dimension " + labels_.back().name() + " must cover [0,1]");
            }
        }
    }
}

const CompositeGaussRule& TensorGrid::rule(int dim) const
{
    if (dim < 0 || dim >= total_dims()) {
        throw UsageError("TensorGrid::rule: dimension " + std::to_string(dim) + " out of range");
    }
    return rules_[static_cast<std::size_t>(dim)];
}

const DimLabel& TensorGrid::label(int dim) const
{
    if (dim < 0 || dim >= total_dims()) {
        throw UsageError("TensorGrid::label: dimension " + std::to_string(dim) + " out of range");
    }
    return labels_[static_cast<std::size_t>(dim)];
}

int TensorGrid::dim_index(int group, int axis) const
{
    if (group < 0 || group > K_ || axis < 0 || axis >= d_) {
        throw UsageError("TensorGrid::dim_index: (group, axis) out of range");
    }
    return group * d_ + axis;
}

std::vector<int> TensorGrid::group_dims(int group) const
{
    std::vector<int> dims;
    for (int a = 0; a < d_; ++a) {
        dims.push_back(dim_index(group, a));
    }
    return dims;
}

}  // namespace tenshom
