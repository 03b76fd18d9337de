#include "tenshom/diagnostics.hpp"

#include "tenshom/error.hpp"
#include "tenshom/homogenize.hpp"
#include "tenshom/macro_solver.hpp"

#include <chrono>
#include <cmath>
#include <algorithm>
#include <functional>
#include <numbers>
#include <random>

namespace tenshom {

namespace {

constexpr double kPi = std::numbers::pi;

TensorGrid small_grid(const Problem& p, int n_sub, int n_pts)
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

using Loss = std::function<double(const TnnModel&, std::vector<double>* grad)>;

double deviation(double g, double fd) { return std::abs(g - fd) / std::max(std::abs(fd), 1e-3); }

GradcheckCase check_case(const std::string& kind, const TnnModel& model, const Loss& loss, std::mt19937_64& rng,
                         int max_params)
{
    GradcheckCase out;
    out.kind = kind;
    std::vector<double> g;
    (void)loss(model, &g);
    const std::vector<double> theta = get_params(model);
    std::vector<std::size_t> idx(theta.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), static_cast<std::size_t>(max_params)));
    TnnModel work = model;
    auto at = [&](std::size_t i, double v) {
        std::vector<double> t = theta;
        t[i] = v;
        set_params(work, t);
        return loss(work, nullptr);
    };
    for (std::size_t i : idx) {
        const double h = 1e-4 * std::max(1.0, std::abs(theta[i]));
        const double d1 = (at(i, theta[i] + h) - at(i, theta[i] - h)) / (2 * h);
        const double d2 = (at(i, theta[i] + h / 2) - at(i, theta[i] - h / 2)) / h;
        const double fd = (4.0 * d2 - d1) / 3.0;
        out.max_deviation = std::max(out.max_deviation, deviation(g[i], fd));
        ++out.n_checked;
    }
    return out;
}

TnnModel random_model(const std::vector<int>& dims, const TensorGrid& grid, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> width(3, 5);
    std::uniform_int_distribution<int> rank(2, 4);
    const int w = width(rng);
    std::vector<SubnetworkSpec> specs;
    for (int d : dims) {
        SubnetworkSpec s;
        s.hidden = {w, w};
        s.periodic = grid.label(d).is_fast();
        specs.push_back(s);
    }
    return init_model(dims, specs, rank(rng), rng());
}

GradcheckCase cell_case(const std::string& name, int group, LossRoute route, int n_sub, std::mt19937_64& rng,
                        int max_params)
{
    const Problem p = builtin(name);
    const TensorGrid grid = small_grid(p, n_sub, 4);
    const CellProblem cell = make_cell_problem(sample_coefficient(p.coeff, grid), grid, group);
    std::uniform_int_distribution<int> pick(0, p.d - 1);
    const int j = pick(rng);
    const TnnModel m = random_model(cell.dims, grid, rng);
    const ResidualAssembler assembler(cell_residual(cell, j), m.p, route);
    const Loss loss = [&](const TnnModel& w, std::vector<double>* grad) {
        ad::Tape tape;
        const TnnLeaves lv = make_leaves(w, tape, true);
        const ad::Var v = ad::sqrt(assembler.squared(wrap_corrector(cell, w, lv)));
        if (grad) {
            tape.backward(v);
            *grad = gather_gradient(tape, w, lv);
        }
        return v.scalar();
    };
    const std::string kind = "cell " + name + " group " + std::to_string(group) + " dir " + std::to_string(j + 1) +
                             " / " + to_string(assembler.route());
    return check_case(kind, m, loss, rng, max_params);
}

GradcheckCase macro_case(int d, LossRoute route, std::mt19937_64& rng, int max_params)
{
    using P = Primitive1D;
    Problem p = builtin(d == 1 ? "ex_1D" : "ex_2D_2");
    const TensorGrid grid = small_grid(p, 3, 4);
    SeparableExpr a{{ExprTerm{2.0, {}}, ExprTerm{0.5, {{0, P::sin_freq(1.0)}}}}};
    if (d == 2) {
        a.terms.push_back(ExprTerm{0.3, {{0, P::cos_freq(1.0)}, {1, P::sin_freq(2.0)}}});
    }
    const auto a0 = sample_coefficient(TensorCoefficient::isotropic(d, p.K, a, 0.1), grid);
    const MacroProblem pr = make_macro_problem(a0, p.source, p.domain, grid);
    const TnnModel m = random_model(pr.dims, grid, rng);
    const ResidualAssembler assembler(macro_residual(pr), m.p, route);
    const Loss loss = [&](const TnnModel& w, std::vector<double>* grad) {
        ad::Tape tape;
        const TnnLeaves lv = make_leaves(w, tape, true);
        const ad::Var v = ad::sqrt(assembler.squared(wrap_macro(pr, w, lv)));
        if (grad) {
            tape.backward(v);
            *grad = gather_gradient(tape, w, lv);
        }
        return v.scalar();
    };
    return check_case("macro " + std::to_string(d) + "d / " + to_string(assembler.route()), m, loss, rng, max_params);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, int n_cases, int max_params)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(seed);
    GradcheckReport rep;
    for (int c = 0; c < n_cases; ++c) {
        GradcheckCase gc;
        switch (c % 9) {
        case 0: gc = cell_case("ex_1D", 1, LossRoute::separable, 3, rng, max_params); break;
        case 1: gc = cell_case("ex_1D", 1, LossRoute::dense, 3, rng, max_params); break;
        case 2: gc = cell_case("ex_2D_1", 1, LossRoute::dense, 3, rng, max_params); break;
        case 3: gc = cell_case("ex_2D_1", 1, LossRoute::separable, 3, rng, max_params); break;
        case 4: gc = cell_case("ex_2D_2", 1, LossRoute::separable, 2, rng, max_params); break;
        case 5: gc = macro_case(1, LossRoute::automatic, rng, max_params); break;
        case 6: gc = macro_case(2, LossRoute::dense, rng, max_params); break;
        case 7: gc = macro_case(2, LossRoute::separable, rng, max_params); break;
        default: gc = cell_case("ex_1D_3scale", 2, LossRoute::separable, 2, rng, max_params); break;
        }
        rep.max_deviation = std::max(rep.max_deviation, gc.max_deviation);
        rep.cases.push_back(std::move(gc));
    }
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

QuadcheckReport run_quadcheck()
{
    QuadcheckReport rep;
    const auto r = build_gauss_rule({0.0, 1.0}, 1, 16);
    for (int k = 0; k <= 31; ++k) {
        std::vector<double> v(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            v[i] = std::pow(r.nodes()[i], k);
        }
        const double exact = 1.0 / (k + 1);
        rep.monomial_rel = std::max(rep.monomial_rel, std::abs(integrate_1d(r, v) - exact) / exact);
    }
    for (int n = 1; n <= 32; ++n) {
        for (int sub : {1, 3, 40}) {
            const auto q = build_gauss_rule({-1.0, kPi}, sub, n);
            double s = 0.0;
            for (double w : q.weights()) {
                s += w;
            }
            rep.weight_sum_rel = std::max(rep.weight_sum_rel, std::abs(s - (kPi + 1.0)) / (kPi + 1.0));
        }
    }
    return rep;
}

double analytic_homogenized(const std::string& problem, double x, double y1)
{
    if (problem == "ex_1D") {
        const double b = 2.0 + std::sin(x);
        return std::sqrt(b * b - 0.25);
    }
    if (problem == "ex_1D_3scale") {
        const double b = 3.0 + std::sin(x) + std::sin(2.0 * kPi * y1);
        return std::sqrt(b * b - 0.25);
    }
    throw ConfigError("no analytic homogenized coefficient for problem '" + problem + "'");
}

OracleReport run_oracle(const std::string& problem, int n_sub, int n_pts)
{
    const Problem p = builtin(problem);
    if (p.d != 1) {
        throw ConfigError("oracle: problem '" + problem + "' has no closed-form homogenized coefficient (d = 2)");
    }
    const TensorGrid grid = small_grid(p, n_sub, n_pts);
    OracleReport rep;
    const auto& xs = grid.rule(0).nodes();
    if (p.K == 1) {
        const Tabulated t = harmonic_homogenized_1d(p.coeff, grid, {0});
        for (std::size_t i = 0; i < xs.size(); ++i) {
            OracleRow row{"A0", xs[i], 0.0, analytic_homogenized(problem, xs[i]), t.values[i]};
            rep.max_deviation = std::max(rep.max_deviation, std::abs(row.analytic - row.quadrature));
            rep.rows.push_back(row);
        }
        return rep;
    }
    const Tabulated t = harmonic_homogenized_1d(p.coeff, grid, {0, 1});
    const auto& ys = grid.rule(1).nodes();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t j = 0; j < ys.size(); ++j) {
            OracleRow row{"A1", xs[i], ys[j], analytic_homogenized(problem, xs[i], ys[j]),
                          t.values[i * ys.size() + j]};
            rep.max_deviation = std::max(rep.max_deviation, std::abs(row.analytic - row.quadrature));
            rep.rows.push_back(row);
        }
    }
    return rep;
}

}  // namespace tenshom
