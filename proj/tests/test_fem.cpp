#include "tenshom/coeffs.hpp"
#include "tenshom/error.hpp"
#include "tenshom/fem_ref.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

using namespace tenshom;

namespace {

constexpr double kPi = std::numbers::pi;

double l2_vs_sin(int n)
{
    const auto sol = solve_dirichlet_1d([](double) { return 1.0; }, [](double x) { return std::sin(x); },
                                        Mesh1D::uniform({0.0, kPi}, n));
    const auto rep = error_norms([](double x) { return std::array<double, 2>{std::sin(x), std::cos(x)}; }, sol, 6);
    return rep.l2_abs;
}

double l2_vs_sinsin(int n)
{
    const auto sol = solve_dirichlet_q1_2d([](double, double) { return 1.0; },
                                           [](double x, double y) { return 2.0 * std::sin(x) * std::sin(y); },
                                           {0.0, kPi}, {0.0, kPi}, n);
    const auto rep = error_norms(
        [](double x, double y) {
            return std::array<double, 3>{std::sin(x) * std::sin(y), std::cos(x) * std::sin(y), std::sin(x) * std::cos(y)};
        },
        sol, 3);
    return rep.l2_abs;
}

}  // namespace

TEST(Mesh1D, Invariants)
{
    const auto m = Mesh1D::uniform({0.0, 2.0}, 8);
    ASSERT_EQ(m.nodes.size(), 9u);
    for (std::size_t i = 1; i < m.nodes.size(); ++i) {
        EXPECT_GT(m.nodes[i], m.nodes[i - 1]);
    }
    EXPECT_DOUBLE_EQ(m.nodes.back(), 2.0);
    EXPECT_THROW((void)Mesh1D::uniform({0.0, 1.0}, 1), UsageError);
}

TEST(Dirichlet1D, SineSolution)
{
    const auto mesh = Mesh1D::uniform({0.0, kPi}, 2048);
    const auto sol = solve_dirichlet_1d([](double) { return 1.0; }, [](double x) { return std::sin(x); }, mesh);
    double err = 0.0;
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
        err = std::max(err, std::abs(sol.u[i] - std::sin(mesh.nodes[i])));
    }
    EXPECT_LE(err, 1e-6);
}

TEST(Dirichlet1D, SecondOrderConvergence)
{
    const double ratio = l2_vs_sin(256) / l2_vs_sin(512);
    EXPECT_GE(ratio, 3.6);
    EXPECT_LE(ratio, 4.4);
}

TEST(Dirichlet1D, OscillatingCoefficientRefinementStable)
{
    const auto p = builtin("ex_1D");
    const double eps = 0.1;
    const auto a = [&](double x) {
        const double pt[1] = {x};
        return oscillating_entry(p.coeff, eps, pt, 0, 0);
    };
    const auto f = [&](double x) {
        const double pt[2] = {x, 0.0};
        return p.source.value(pt);
    };
    const auto coarse = solve_dirichlet_1d(a, f, Mesh1D::uniform(p.domain[0], 1280));
    const auto fine = solve_dirichlet_1d(a, f, Mesh1D::uniform(p.domain[0], 2560));
    const auto rep = error_norms([&](double x) { return std::array<double, 2>{coarse.value(x), coarse.derivative(x)}; },
                                 fine);
    EXPECT_LE(rep.l2_rel, 1e-3);
}

TEST(Dirichlet1D, RejectsNonPositiveCoefficient)
{
    EXPECT_THROW((void)solve_dirichlet_1d([](double x) { return x - 0.5; }, [](double) { return 1.0; },
                                          Mesh1D::uniform({0.0, 1.0}, 16)),
                 EllipticityError);
}

TEST(CellPeriodic1D, ConstantCoefficientGivesZeroCorrector)
{
    const auto sol = solve_cell_periodic_1d([](double) { return 3.0; }, 64);
    for (double v : sol.chi.u) {
        EXPECT_NEAR(v, 0.0, 1e-12);
    }
    EXPECT_NEAR(sol.homogenized, 3.0, 1e-12);
}

TEST(CellPeriodic1D, ClosedFormDerivativeAndHarmonicMean)
{
    const auto a = [](double y) { return 2.0 + 0.5 * std::sin(2.0 * kPi * y); };
    const auto sol = solve_cell_periodic_1d(a, 4096);
    const double C = std::sqrt(4.0 - 0.25);
    double worst = 0.0;
    const double h = 1.0 / 4096;
    for (int e = 0; e < 4096; e += 7) {
        const double y = (e + 0.5) * h;
        worst = std::max(worst, std::abs(sol.chi.derivative(y) - (C / a(y) - 1.0)));
    }
    EXPECT_LE(worst, 1e-6);
    // Same-quadrature harmonic mean: 1 / sum_e h / mean_e(a) with two-point Gauss means.
    double inv = 0.0;
    const double g0 = 0.5 - 0.5 / std::numbers::sqrt3;
    for (int e = 0; e < 4096; ++e) {
        inv += h / (0.5 * (a((e + g0) * h) + a((e + 1 - g0) * h)));
    }
    EXPECT_NEAR(sol.homogenized, 1.0 / inv, 1e-8);
    // Against the exact value the gap is the O(h^2) quadrature error.
    EXPECT_NEAR(sol.homogenized, C, h * h);
    EXPECT_NEAR(sol.chi.u.front(), sol.chi.u.back(), 1e-14);
}

TEST(CellPeriodic1D, RejectsSingular)
{
    EXPECT_THROW((void)solve_cell_periodic_1d([](double y) { return std::sin(2.0 * kPi * y); }, 32), ReferenceError);
}

TEST(Q1, EigenfunctionSolution)
{
    const int n = 512;
    const auto sol = solve_dirichlet_q1_2d([](double, double) { return 1.0; },
                                           [](double x, double y) { return 2.0 * std::sin(x) * std::sin(y); },
                                           {0.0, kPi}, {0.0, kPi}, n);
    double err = 0.0;
    const double h = kPi / n;
    for (int j = 0; j <= n; ++j) {
        for (int i = 0; i <= n; ++i) {
            err = std::max(err, std::abs(sol.u[static_cast<std::size_t>(j * (n + 1) + i)] -
                                         std::sin(i * h) * std::sin(j * h)));
        }
    }
    EXPECT_LE(err, 1e-4);
    EXPECT_LE(sol.report.relative_residual, 1e-9);
}

TEST(Q1, SecondOrderConvergence)
{
    const double ratio = l2_vs_sinsin(128) / l2_vs_sinsin(256);
    EXPECT_GE(ratio, 3.6);
    EXPECT_LE(ratio, 4.4);
}

TEST(Q1, SystemIsSymmetricWithPositiveDiagonal)
{
    const auto sys = assemble_dirichlet_q1_2d(
        [](double x, double y) -> std::array<double, 3> {
            return {2.0 + std::sin(5 * x), 0.3 * std::cos(3 * y), 1.5 + std::cos(7 * x * y)};
        },
        [](double, double) { return 1.0; }, {0.0, 1.0}, {0.0, 1.0}, 24);
    const Eigen::SparseMatrix<double> K = sys.K;
    const Eigen::SparseMatrix<double> Kt = K.transpose();
    const Eigen::SparseMatrix<double> D = K - Kt;
    double asym = 0.0;
    for (int k = 0; k < D.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(D, k); it; ++it) {
            asym = std::max(asym, std::abs(it.value()));
        }
    }
    EXPECT_LE(asym, 1e-12 * K.coeffs().abs().maxCoeff());
    for (int i = 0; i < K.rows(); ++i) {
        EXPECT_GT(K.coeff(i, i), 0.0);
    }
}

TEST(Q1, MeshGuard)
{
    EXPECT_THROW((void)assemble_dirichlet_q1_2d([](double, double) { return std::array<double, 3>{1, 0, 1}; },
                                               [](double, double) { return 1.0; }, {0, 1}, {0, 1}, kMaxQ1Mesh + 1),
                 UsageError);
}

TEST(Q1, PointEvaluationInterpolates)
{
    const auto sol = solve_dirichlet_q1_2d([](double, double) { return 1.0; },
                                           [](double x, double y) { return 2.0 * std::sin(x) * std::sin(y); },
                                           {0.0, kPi}, {0.0, kPi}, 256);
    EXPECT_NEAR(sol.value(kPi / 2, kPi / 2), 1.0, 1e-4);
    // Elementwise gradients are first-order accurate away from nodes.
    const auto g = sol.gradient(kPi / 4, kPi / 2 + 0.003);
    EXPECT_NEAR(g[0], std::cos(kPi / 4), 1e-2);
    EXPECT_NEAR(g[1], 0.0, 1e-2);
    EXPECT_THROW((void)sol.value(4.0, 1.0), UsageError);
}

TEST(ErrorNorms, ZeroForExactInterpolant)
{
    const auto sol = solve_dirichlet_1d([](double) { return 1.0; }, [](double) { return 2.0; },
                                        Mesh1D::uniform({0.0, 1.0}, 8));
    // -u'' = 2 has u = x(1-x); P1 nodal values are exact, so the candidate is the interpolant itself.
    const auto rep = error_norms([&](double x) { return std::array<double, 2>{sol.value(x), sol.derivative(x)}; }, sol);
    EXPECT_LE(rep.l2_abs, 1e-15);
    EXPECT_LE(rep.h1_abs, 1e-14);
    EXPECT_NEAR(sol.u[4], 0.25, 1e-14);
}

TEST(MeshRules, Sizes)
{
    EXPECT_EQ(mesh_1d_for(0.1, 1), 10240);
    EXPECT_EQ(mesh_1d_for(0.2, 2), 25600);
    EXPECT_EQ(mesh_2d_for(0.2), 256);
    EXPECT_EQ(mesh_2d_for(0.05), 640);
    EXPECT_THROW((void)mesh_2d_for(1.5), UsageError);
}

TEST(ReferenceCache, RoundTripAndKeyMismatch)
{
    const auto path = (std::filesystem::temp_directory_path() / "tenshom_cache_test.bin").string();
    const std::vector<double> v{1.0, -2.5, 3.25, 1e-300, 7.0, 8.0};
    save_reference(path, "ex/eps=0.1", {2, 3}, v);
    const auto back = load_reference(path, "ex/eps=0.1");
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(back->first, (std::vector<std::uint64_t>{2, 3}));
    EXPECT_EQ(back->second, v);
    EXPECT_FALSE(load_reference(path, "ex/eps=0.2").has_value());
    EXPECT_FALSE(load_reference(path + ".missing", "ex/eps=0.1").has_value());
    std::filesystem::remove(path);
}
