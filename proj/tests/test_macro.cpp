#include "tenshom/error.hpp"
#include "tenshom/macro_solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace tenshom;

namespace {

constexpr double kPi = std::numbers::pi;
using P = Primitive1D;

TensorGrid grid_1d(int K, int n_sub = 8, int n_pts = 8, int n_fast_sub = 4)
{
    std::vector<CompositeGaussRule> rules{build_gauss_rule({0.0, kPi}, n_sub, n_pts)};
    for (int g = 1; g <= K; ++g) {
        rules.push_back(build_gauss_rule({0.0, 1.0}, n_fast_sub, 8));
    }
    return TensorGrid(1, K, std::move(rules));
}

SampledCoefficient sampled(const SeparableExpr& a, const TensorGrid& grid)
{
    return sample_coefficient(TensorCoefficient::isotropic(grid.d(), grid.K(), a, 0.1), grid);
}

SeparableExpr sin_x() { return SeparableExpr{{ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}}}; }
SeparableExpr constant(double c) { return SeparableExpr{{ExprTerm{c, {}}}}; }

// Rank-1 model whose raw factor is constant, so that the masked normalised
// function is c * sin(x) / sqrt(pi).
TnnModel exact_sine_model(const MacroProblem& pr)
{
    TrainConfig cfg;
    cfg.p = 1;
    cfg.widths = {4};
    TnnModel m = init_model(pr.dims, macro_subnet_specs(pr, cfg), 1, 5);
    for (auto& net : m.subnets) {
        for (auto& w : net.weights) {
            w.setZero();
        }
        for (auto& b : net.biases) {
            b.setZero();
        }
        net.biases.back().setConstant(0.7);
    }
    m.c(0) = std::sqrt(kPi);
    return m;
}

TnnModel random_model(const std::vector<int>& dims, const TensorGrid& grid, int p, std::uint64_t seed)
{
    std::vector<SubnetworkSpec> specs;
    for (int d : dims) {
        SubnetworkSpec s;
        s.hidden = {6, 6};
        s.periodic = grid.label(d).is_fast();
        specs.push_back(s);
    }
    return init_model(dims, specs, p, seed);
}

}  // namespace

TEST(MacroLoss, ExactSolutionGivesZero)
{
    const auto grid = grid_1d(1);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const TnnModel m = exact_sine_model(pr);
    ad::Tape tape;
    const auto lv = make_leaves(m, tape, false);
    EXPECT_LE(assemble_macro_loss(pr, wrap_macro(pr, m, lv)).scalar(), 1e-12);
    const PointTnn u(m, grid, {}, pr.mask);
    const double x = 1.1;
    EXPECT_NEAR(u.value(std::span<const double>(&x, 1)), std::sin(x), 1e-12);
    const double mid = kPi / 2;
    EXPECT_NEAR(gradient_field(u, pr.domain, std::span<const double>(&mid, 1))[0], 0.0, 1e-12);
}

TEST(MacroLoss, DenseOracleAgreement)
{
    const auto grid = grid_1d(1, 4, 6);
    const SeparableExpr a{{ExprTerm{2.0, {}}, ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}}};
    const auto pr = make_macro_problem(sampled(a, grid), sin_x(), {{0.0, kPi}}, grid);
    const TnnModel m = random_model(pr.dims, grid, 4, 11);
    ad::Tape tape;
    const auto lv = make_leaves(m, tape, false);
    const double loss = assemble_macro_loss(pr, wrap_macro(pr, m, lv)).scalar();
    const PointTnn u(m, grid, {}, pr.mask);
    const auto& xs = grid.rule(0).nodes();
    const auto& ws = grid.rule(0).weights();
    double sq = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double x = xs[i];
        const auto e = u.eval(std::span<const double>(&x, 1), true);
        const double r = std::cos(x) * e.grad(0) + (2.0 + std::sin(x)) * e.hess(0, 0) + std::sin(x);
        sq += ws[i] * r * r;
    }
    EXPECT_NEAR(loss, std::sqrt(sq), 1e-10 * std::sqrt(sq));
}

TEST(MacroLoss, SourceScalingHomogeneity)
{
    const auto grid = grid_1d(1);
    const SeparableExpr a{{ExprTerm{2.0, {}}, ExprTerm{0.5, {{0, P::cos_freq(2.0)}}}}};
    SeparableExpr f2 = sin_x();
    f2.terms[0].scale = 2.0;
    const auto p1 = make_macro_problem(sampled(a, grid), sin_x(), {{0.0, kPi}}, grid);
    const auto p2 = make_macro_problem(sampled(a, grid), f2, {{0.0, kPi}}, grid);
    TnnModel m1 = random_model(p1.dims, grid, 3, 2);
    TnnModel m2 = m1;
    m2.c *= 2.0;
    ad::Tape tape;
    const double l1 = assemble_macro_loss(p1, wrap_macro(p1, m1, make_leaves(m1, tape, false))).scalar();
    const double l2 = assemble_macro_loss(p2, wrap_macro(p2, m2, make_leaves(m2, tape, false))).scalar();
    EXPECT_NEAR(l2, 2.0 * l1, 1e-12 * l2);
}

TEST(MacroProblem, RejectsFastDependence)
{
    const auto grid = grid_1d(1);
    const SeparableExpr a{{ExprTerm{2.0, {}}, ExprTerm{0.5, {{1, P::sin_freq(2 * kPi)}}}}};
    EXPECT_THROW((void)make_macro_problem(sampled(a, grid), sin_x(), {{0.0, kPi}}, grid), UsageError);
    EXPECT_THROW((void)make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, 2.0}}, grid), UsageError);
}

TEST(TrainMacro, RecoversSineAndKeepsBoundary)
{
    const auto grid = grid_1d(1, 16, 8);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    TrainConfig cfg;
    cfg.p = 4;
    cfg.widths = {10, 10};
    cfg.steps_adam = 3000;
    cfg.log_every = 500;
    const auto sol = train_macro(pr, cfg, {true, {}});
    const auto u = sol.evaluator(pr);
    double num = 0.0;
    double den = 0.0;
    const auto& xs = grid.rule(0).nodes();
    const auto& ws = grid.rule(0).weights();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double v = u.value(std::span<const double>(&xs[i], 1));
        num += ws[i] * (v - std::sin(xs[i])) * (v - std::sin(xs[i]));
        den += ws[i] * std::sin(xs[i]) * std::sin(xs[i]);
    }
    EXPECT_LE(std::sqrt(num / den), 1e-4);
    EXPECT_LE(sol.structure.boundary, 1e-14);
    EXPECT_LE(sol.structure.norm_deviation, 1e-12);
    EXPECT_EQ(sol.history.back().step, 3000);
}

TEST(TrainMacro, DeterministicReplay)
{
    const auto grid = grid_1d(1, 4, 6);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    TrainConfig cfg;
    cfg.p = 3;
    cfg.widths = {6};
    cfg.steps_adam = 50;
    cfg.log_every = 10;
    const auto a = train_macro(pr, cfg, {true, {}});
    const auto b = train_macro(pr, cfg, {true, {}});
    EXPECT_EQ(get_params(a.model), get_params(b.model));
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].loss, b.history[i].loss);
        EXPECT_EQ(a.history[i].wall_ms, 0.0);
    }
}

TEST(GradientField, FiniteDifferencesAndBoundary)
{
    const auto grid = grid_1d(1);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const PointTnn u(random_model(pr.dims, grid, 3, 9), grid, {}, pr.mask);
    const double h = 1e-5;
    for (double x : {0.3, 1.7, 2.9}) {
        const double xp = x + h;
        const double xm = x - h;
        const double fd = (u.value(std::span<const double>(&xp, 1)) - u.value(std::span<const double>(&xm, 1))) / (2 * h);
        EXPECT_NEAR(gradient_field(u, pr.domain, std::span<const double>(&x, 1))[0], fd, 1e-6);
    }
    const double end = kPi;
    EXPECT_EQ(u.value(std::span<const double>(&end, 1)), 0.0);
    EXPECT_TRUE(std::isfinite(gradient_field(u, pr.domain, std::span<const double>(&end, 1))[0]));
    const double out = 3.5;
    EXPECT_THROW((void)gradient_field(u, pr.domain, std::span<const double>(&out, 1)), UsageError);
}

TEST(GradientField, OffGridMatchesTables)
{
    const auto grid = grid_1d(1, 4, 6);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const TnnModel m = random_model(pr.dims, grid, 3, 21);
    const auto tab = dense_eval_oracle(wrap_macro(pr, m));
    const PointTnn u(m, grid, {}, pr.mask);
    const auto& xs = grid.rule(0).nodes();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        EXPECT_NEAR(u.value(std::span<const double>(&xs[i], 1)), tab[i], 1e-12);
    }
}

TEST(HarmonicMacro, AnalyticExample)
{
    const auto grid = grid_1d(1, 4, 6);
    const auto p = builtin("ex_1D");
    const auto a0 = harmonic_macro_coefficient(p.coeff, grid);
    const auto& fac = a0.entries[0].factors[0];
    const auto& xs = grid.rule(0).nodes();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double b = 2.0 + std::sin(xs[i]);
        const double v = std::sqrt(b * b - 0.25);
        const double dv = b * std::cos(xs[i]) / v;
        const double ddv = (std::cos(xs[i]) * std::cos(xs[i]) - b * std::sin(xs[i])) / v - b * b * std::cos(xs[i]) *
                                                                                           std::cos(xs[i]) / (v * v * v);
        EXPECT_NEAR(fac.values(0, static_cast<Eigen::Index>(i)), v, 1e-12);
        EXPECT_NEAR((*fac.d1)(0, static_cast<Eigen::Index>(i)), dv, 1e-11);
        EXPECT_NEAR((*fac.d2)(0, static_cast<Eigen::Index>(i)), ddv, 1e-10);
    }
}

TEST(Reconstruct, ZeroCorrectorGivesMacroSolution)
{
    const auto grid = grid_1d(1);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const PointTnn u0(random_model(pr.dims, grid, 3, 4), grid, {}, pr.mask);
    TnnModel chi = random_model({0, 1}, grid, 3, 8);
    chi.c.setZero();
    const MultiscaleSolution ms(grid, 1, pr.domain, u0, {{PointTnn(chi, grid, {1})}}, 0.1);
    for (double x : {0.2, 1.0, 2.5}) {
        const auto p = ms.eval(std::span<const double>(&x, 1));
        EXPECT_EQ(p.u_eps, p.u0);
        EXPECT_EQ(p.u1, 0.0);
        EXPECT_NEAR(p.grad[0], gradient_field(u0, pr.domain, std::span<const double>(&x, 1))[0], 1e-15);
    }
    EXPECT_THROW(MultiscaleSolution(grid, 1, pr.domain, u0, {{PointTnn(chi, grid, {1})}}, 1.0), UsageError);
    EXPECT_THROW(MultiscaleSolution(grid, 1, pr.domain, u0, {{PointTnn(chi, grid, {1})}}, 0.0), UsageError);
}

TEST(Reconstruct, ChainRuleGradientTwoScales)
{
    const auto grid = grid_1d(1);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const PointTnn u0(random_model(pr.dims, grid, 3, 4), grid, {}, pr.mask);
    const PointTnn chi(random_model({0, 1}, grid, 3, 8), grid, {1});
    const double eps = 0.3;
    const MultiscaleSolution ms(grid, 1, pr.domain, u0, {{chi}}, eps);
    const double h = 1e-6;
    for (double x : {0.4, 1.3, 2.2}) {
        const auto p = ms.eval(std::span<const double>(&x, 1));
        const double y = x / eps - std::floor(x / eps);
        const double pt[2] = {x, y};
        const auto c = chi.eval(pt);
        const auto g0 = gradient_field(u0, pr.domain, std::span<const double>(&x, 1))[0];
        EXPECT_NEAR(p.u1, c.value * g0, 1e-14);
        EXPECT_NEAR(p.grad_leading[0], g0 + c.grad(1) * g0, 1e-12);
        const double xp = x + h;
        const double xm = x - h;
        const double fd = (ms.eval(std::span<const double>(&xp, 1), false).u_eps -
                           ms.eval(std::span<const double>(&xm, 1), false).u_eps) /
                          (2 * h);
        EXPECT_NEAR(p.grad[0], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Reconstruct, ChainRuleGradientThreeScales)
{
    const auto grid = grid_1d(2);
    SeparableExpr a = constant(1.0);
    const auto coeff = TensorCoefficient::isotropic(1, 2, a, 0.1);
    const auto pr = make_macro_problem(sample_coefficient(coeff, grid), sin_x(), {{0.0, kPi}}, grid);
    const PointTnn u0(random_model(pr.dims, grid, 3, 4), grid, {}, pr.mask);
    const PointTnn chi1(random_model({0, 1}, grid, 3, 8), grid, {1});
    const PointTnn chi2(random_model({0, 1, 2}, grid, 3, 12), grid, {2});
    const double eps = 0.6;
    const MultiscaleSolution ms(grid, 1, pr.domain, u0, {{chi1}, {chi2}}, eps);
    const double h = 1e-6;
    for (double x : {0.45, 1.35, 2.05}) {
        const auto p = ms.eval(std::span<const double>(&x, 1));
        const double y1 = x / eps - std::floor(x / eps);
        const double y2 = x / (eps * eps) - std::floor(x / (eps * eps));
        const double g0 = gradient_field(u0, pr.domain, std::span<const double>(&x, 1))[0];
        const double p1[2] = {x, y1};
        const auto c1 = chi1.eval(p1);
        const double p2[3] = {x, y1, y2};
        const double M = g0 + c1.grad(1) * g0;
        EXPECT_NEAR(p.u2, chi2.value(p2) * M, 1e-13);
        EXPECT_NEAR(p.u_eps, p.u0 + eps * p.u1 + eps * eps * p.u2, 1e-14);
        const double xp = x + h;
        const double xm = x - h;
        const double fd = (ms.eval(std::span<const double>(&xp, 1), false).u_eps -
                           ms.eval(std::span<const double>(&xm, 1), false).u_eps) /
                          (2 * h);
        EXPECT_NEAR(p.grad[0], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Reconstruct, CsvLayout)
{
    const auto grid = grid_1d(1);
    const auto pr = make_macro_problem(sampled(constant(1.0), grid), sin_x(), {{0.0, kPi}}, grid);
    const PointTnn u0(random_model(pr.dims, grid, 2, 4), grid, {}, pr.mask);
    const PointTnn chi(random_model({0, 1}, grid, 2, 8), grid, {1});
    const MultiscaleSolution ms(grid, 1, pr.domain, u0, {{chi}}, 0.2);
    std::ostringstream os;
    ms.write_csv(os, 5);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x,u0,u1,u_eps");
    int rows = 0;
    while (std::getline(is, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 5);
}
