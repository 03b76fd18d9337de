#include "tenshom/coeffs.hpp"
#include "tenshom/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace tenshom;

namespace {

constexpr double kPi = std::numbers::pi;

TensorGrid grid_for(const Problem& p, int n_sub, int n_pts)
{
    std::vector<CompositeGaussRule> rules;
    for (int g = 0; g <= p.K; ++g) {
        for (int a = 0; a < p.d; ++a) {
            rules.push_back(build_gauss_rule(g == 0 ? p.domain[static_cast<std::size_t>(a)] : Interval1D{0.0, 1.0},
                                             n_sub, n_pts));
        }
    }
    return TensorGrid(p.d, p.K, std::move(rules));
}

}  // namespace

TEST(Primitive, EvalDerivatives)
{
    const auto s = Primitive1D::sin_freq(2.0 * kPi).eval(0.0);
    EXPECT_NEAR(s[0], 0.0, 1e-15);
    EXPECT_NEAR(s[1], 2.0 * kPi, 1e-14);
    const auto p = Primitive1D::polynomial({1.0, 2.0, 3.0}).eval(2.0);
    EXPECT_DOUBLE_EQ(p[0], 17.0);
    EXPECT_DOUBLE_EQ(p[1], 14.0);
    EXPECT_DOUBLE_EQ(p[2], 6.0);
    EXPECT_TRUE(Primitive1D::constant(3.0).is_constant());
}

TEST(Builtin, Ex1DIntegralAndDerivative)
{
    const Problem p = builtin("ex_1D");
    const TensorGrid g = grid_for(p, 8, 8);
    const Separable a = sample_expr(p.coeff.entry(0, 0), g);
    const Separable total = partial_integrate(a, a.dims);
    EXPECT_NEAR(scalar_value(total), 2.0 * kPi + 2.0, 1e-12);

    const std::vector<double> pt{0.3, 0.0};
    EXPECT_NEAR(p.coeff.entry(0, 0).partial(pt, 1), kPi, 1e-13);
    EXPECT_NEAR(p.coeff.entry(0, 0).partial(pt, 0), std::cos(0.3), 1e-13);
    EXPECT_TRUE(p.coeff.entry(0, 0).depends_on(1));
}

TEST(Builtin, SampledTablesMatchClosedForm)
{
    for (const auto& name : builtin_names()) {
        const Problem p = builtin(name);
        p.coeff.validate();
        const TensorGrid g = grid_for(p, 2, 3);
        const Separable a = sample_expr(p.coeff.entry(0, 0), g);
        a.check();
        std::vector<double> pt(static_cast<std::size_t>(g.total_dims()), 0.0);
        // Node 1 along every dimension.
        for (int d = 0; d < g.total_dims(); ++d) {
            pt[static_cast<std::size_t>(d)] = g.rule(d).nodes()[1];
        }
        double v = 0.0;
        double dv = 0.0;
        const int probe = a.dims.back();
        for (Eigen::Index r = 0; r < a.rank(); ++r) {
            double t = a.coeffs(r, 0);
            double td = a.coeffs(r, 0);
            for (std::size_t k = 0; k < a.dims.size(); ++k) {
                t *= a.factors[k].values(r, 1);
                td *= a.dims[k] == probe ? (*a.factors[k].d1)(r, 1) : a.factors[k].values(r, 1);
            }
            v += t;
            dv += td;
        }
        EXPECT_NEAR(v, p.coeff.entry(0, 0).value(pt), 1e-13) << name;
        EXPECT_NEAR(dv, p.coeff.entry(0, 0).partial(pt, probe), 1e-12) << name;
    }
}

TEST(Builtin, EllipticityHoldsForAll)
{
    for (const auto& name : builtin_names()) {
        const Problem p = builtin(name);
        const TensorGrid g = grid_for(p, 4, 6);
        const auto rep = check_ellipticity(p.coeff, g);
        EXPECT_EQ(rep.violations, 0u) << name;
        EXPECT_GT(rep.checked, 0u);
        const auto sampled = check_ellipticity(sample_coefficient(p.coeff, g), g, p.coeff.gamma);
        EXPECT_EQ(sampled.violations, 0u) << name;
        EXPECT_NEAR(sampled.min_eig, rep.min_eig, 1e-12);
    }
}

TEST(Ellipticity, ViolationThrows)
{
    Problem p = builtin("ex_1D");
    p.coeff.entries[0].terms.back().scale = -0.5;  // A dips below zero
    const TensorGrid g = grid_for(p, 4, 6);
    EXPECT_THROW((void)check_ellipticity(p.coeff, g), EllipticityError);
    EXPECT_GT(check_ellipticity(p.coeff, g, false).violations, 0u);
    EXPECT_THROW((void)harmonic_homogenized_1d(p.coeff, g, {0}), EllipticityError);
}

TEST(Ellipticity, SubsamplesLargeGrids)
{
    const Problem p = builtin("ex_2D_1");
    const TensorGrid g = grid_for(p, 10, 16);
    const auto rep = check_ellipticity(p.coeff, g, true, 1000);
    EXPECT_LE(rep.checked, 1000u);
    EXPECT_EQ(rep.violations, 0u);
}

TEST(Harmonic, Ex1DClosedForm)
{
    const Problem p = builtin("ex_1D");
    const TensorGrid g = grid_for(p, 20, 16);
    const Tabulated t = harmonic_homogenized_1d(p.coeff, g, {0});
    const auto& x = g.rule(0).nodes();
    ASSERT_EQ(t.values.size(), x.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = std::sin(x[i]) + 2.0;
        worst = std::max(worst, std::abs(t.values[i] - std::sqrt(s * s - 0.25)));
    }
    EXPECT_LE(worst, 1e-12);

    Problem at0 = p;
    at0.coeff.entries[0].terms[1].scale = 0.0;
    const Tabulated t0 = harmonic_homogenized_1d(at0.coeff, g, {0});
    EXPECT_NEAR(t0.values[0], std::sqrt(3.75), 1e-12);
}

TEST(Harmonic, ConstantCoefficientIsItself)
{
    Problem p = builtin("ex_1D");
    p.coeff.entries[0] = SeparableExpr{{ExprTerm{1.7, {}}}};
    const TensorGrid g = grid_for(p, 2, 4);
    const Tabulated t = harmonic_homogenized_1d(p.coeff, g, {});
    ASSERT_EQ(t.values.size(), 1u);
    EXPECT_NEAR(t.values[0], 1.7, 1e-14);
}

TEST(Harmonic, BelowArithmeticMean)
{
    const Problem p = builtin("ex_1D");
    const TensorGrid g = grid_for(p, 8, 8);
    const Tabulated t = harmonic_homogenized_1d(p.coeff, g, {0});
    const auto& x = g.rule(0).nodes();
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LT(t.values[i], std::sin(x[i]) + 2.0);
        EXPECT_GT(t.values[i], std::sin(x[i]) + 1.5);
    }
}

TEST(Harmonic, ThreeScaleFirstLevel)
{
    const Problem p = builtin("ex_1D_3scale");
    const TensorGrid g = grid_for(p, 10, 8);
    const Tabulated a1 = harmonic_homogenized_1d(p.coeff, g, {0, 1});
    const auto& x = g.rule(0).nodes();
    const auto& y = g.rule(1).nodes();
    ASSERT_EQ(a1.values.size(), x.size() * y.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double s = std::sin(2.0 * kPi * y[j]) + std::sin(x[i]) + 3.0;
            worst = std::max(worst, std::abs(a1.values[i * y.size() + j] - std::sqrt(s * s - 0.25)));
        }
    }
    EXPECT_LE(worst, 1e-10);
}

TEST(Json, ExpressionRoundTrip)
{
    for (const auto& name : builtin_names()) {
        const Problem p = builtin(name);
        for (const auto& e : p.coeff.entries) {
            const auto j = expr_to_json(e);
            EXPECT_EQ(expr_to_json(expr_from_json(j, p.d)), j);
        }
    }
}

TEST(Json, NamedDimensionsAndFrequencyK)
{
    const auto j = nlohmann::json::parse(R"({"terms":[{"scale":0.5,"factors":[
        {"dim":"y1_2","kind":"sin_freq","k":1},{"dim":"x1","kind":"const","value":2.0}]}]})");
    const SeparableExpr e = expr_from_json(j, 2);
    ASSERT_EQ(e.terms.size(), 1u);
    EXPECT_EQ(e.terms[0].factors[0].first, 3);
    EXPECT_NEAR(e.terms[0].factors[0].second.omega, 2.0 * kPi, 1e-15);
    EXPECT_EQ(dim_from_name("x", 1), 0);
    EXPECT_EQ(dim_from_name("y1", 1), 1);
    EXPECT_EQ(dim_from_name("y2", 1), 2);
    EXPECT_EQ(dim_from_name("y2_1", 2), 4);
    EXPECT_THROW((void)dim_from_name("z3", 1), ConfigError);
    EXPECT_THROW((void)dim_from_name("y1", 2), ConfigError);
    EXPECT_THROW((void)expr_from_json(nlohmann::json::parse(R"({"terms":[{"factors":[{"dim":0,"kind":"tan"}]}]})"), 1),
                 ConfigError);
}

TEST(Validate, RejectsAsymmetricAndDuplicateDims)
{
    TensorCoefficient c = builtin("ex_2D_1").coeff;
    c.entries[1] = SeparableExpr{{ExprTerm{0.1, {}}}};
    EXPECT_THROW(c.validate(), ConfigError);
    TensorCoefficient d = builtin("ex_1D").coeff;
    d.entries[0].terms[0].factors.push_back({1, Primitive1D::constant(1.0)});
    EXPECT_THROW(d.validate(), ConfigError);
    EXPECT_THROW((void)builtin("nope"), ConfigError);
}
