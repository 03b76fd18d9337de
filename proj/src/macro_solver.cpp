#include "tenshom/macro_solver.hpp"

#include "tenshom/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace tenshom {

MacroProblem make_macro_problem(const SampledCoefficient& a0, const SeparableExpr& source,
                                const std::vector<Interval1D>& domain, const TensorGrid& grid)
{
    const int d = grid.d();
    if (a0.d != d || static_cast<int>(domain.size()) != d) {
        throw UsageError("make_macro_problem: dimension mismatch");
    }
    MacroProblem p;
    p.grid = &grid;
    p.d = d;
    p.dims = grid.group_dims(0);
    p.a0 = a0;
    p.domain = domain;
    for (const auto& e : a0.entries) {
        if (e.grid != &grid) {
            throw UsageError("make_macro_problem: A0 sampled on a different grid");
        }
        for (int dim : e.dims) {
            if (grid.label(dim).is_fast()) {
                throw UsageError("make_macro_problem: A0 depends on a fast dimension");
            }
        }
    }
    for (int dim : source.dims()) {
        if (grid.label(dim).is_fast()) {
            throw UsageError("make_macro_problem: source depends on a fast dimension");
        }
    }
    for (int a = 0; a < d; ++a) {
        const auto& r = grid.rule(a).interval();
        const auto& iv = domain[static_cast<std::size_t>(a)];
        if (std::abs(r.lo - iv.lo) > 1e-12 || std::abs(r.hi - iv.hi) > 1e-12) {
            throw UsageError("make_macro_problem: grid does not cover the domain on axis " + std::to_string(a + 1));
        }
    }
    p.f = sample_expr(source, grid);
    p.mask.dims = p.dims;
    p.mask.intervals = domain;
    return p;
}

ResidualSpec macro_residual(const MacroProblem& problem)
{
    std::optional<Separable> constant;
    if (!is_zero(problem.f)) {
        constant = broadcast(problem.f, problem.dims);
    }
    return divergence_residual(problem.a0, problem.dims, problem.dims, constant);
}

TapedSeparable wrap_macro(const MacroProblem& problem, const TnnModel& m, const TnnLeaves& leaves)
{
    if (m.dims != problem.dims) {
        throw UsageError("wrap_macro: model dimensions differ from the slow dimensions");
    }
    return apply_dirichlet_mask(eval_factor_tables(m, leaves, *problem.grid, 2), problem.mask);
}

Separable wrap_macro(const MacroProblem& problem, const TnnModel& m)
{
    ad::Tape tape;
    const TnnLeaves lv = make_leaves(m, tape, false);
    return freeze(wrap_macro(problem, m, lv));
}

ad::Var assemble_macro_loss(const MacroProblem& problem, const TapedSeparable& phi_hat, LossRoute route)
{
    const ResidualAssembler assembler(macro_residual(problem), phi_hat.rank(), route);
    return ad::sqrt(assembler.squared(phi_hat));
}

std::vector<SubnetworkSpec> macro_subnet_specs(const MacroProblem& problem, const TrainConfig& cfg)
{
    std::vector<SubnetworkSpec> specs(problem.dims.size());
    for (auto& s : specs) {
        s.hidden = cfg.widths;
        s.periodic = false;
    }
    return specs;
}

PointTnn MacroSolution::evaluator(const MacroProblem& problem) const
{
    return PointTnn(model, *problem.grid, {}, problem.mask);
}

double boundary_deviation(const PointTnn& u, const std::vector<Interval1D>& domain)
{
    double worst = 0.0;
    if (domain.size() == 1) {
        for (double x : {domain[0].lo, domain[0].hi}) {
            worst = std::max(worst, std::abs(u.value(std::span<const double>(&x, 1))));
        }
        return worst;
    }
    constexpr int n = 64;
    for (int axis = 0; axis < 2; ++axis) {
        const auto& fixed = domain[static_cast<std::size_t>(axis)];
        const auto& run = domain[static_cast<std::size_t>(1 - axis)];
        for (double side : {fixed.lo, fixed.hi}) {
            for (int i = 0; i <= n; ++i) {
                double pt[2];
                pt[axis] = side;
                pt[1 - axis] = run.lo + run.length() * i / n;
                worst = std::max(worst, std::abs(u.value(pt)));
            }
        }
    }
    return worst;
}

StructuralReport macro_structure(const MacroProblem& problem, const TnnModel& m)
{
    StructuralReport r;
    const Separable raw = eval_factor_tables(m, *problem.grid, 0);
    for (std::size_t k = 0; k < m.dims.size(); ++k) {
        const Vec w = detail::weights_vec(*problem.grid, m.dims[k]);
        const Vec nrm = (raw.factors[k].values.array().square().matrix() * w).array().sqrt().matrix();
        r.norm_deviation = std::max(r.norm_deviation, (nrm.array() - 1.0).abs().maxCoeff());
    }
    r.boundary = boundary_deviation(PointTnn(m, *problem.grid, {}, problem.mask), problem.domain);
    return r;
}

MacroSolution train_macro(const MacroProblem& problem, const TrainConfig& cfg, const TrainOptions& opts)
{
    cfg.validate();
    const auto specs = macro_subnet_specs(problem, cfg);
    TnnModel model = init_model(problem.dims, specs, cfg.p, cfg.seed + 31337u);
    const ResidualAssembler assembler(macro_residual(problem), cfg.p, cfg.route);
    TnnModel work = model;
    const Objective objective = [&](std::span<const double> theta, std::span<double> grad) {
        set_params(work, theta);
        ad::Tape tape;
        const TnnLeaves lv = make_leaves(work, tape, true);
        const ad::Var sq = assembler.squared(wrap_macro(problem, work, lv));
        tape.backward(sq);
        const auto g = gather_gradient(tape, work, lv);
        std::copy(g.begin(), g.end(), grad.begin());
        return sq.scalar();
    };
    Observer observer;
    if (opts.hook) {
        observer = [&](int step, std::span<const double> theta) {
            TnnModel snap = model;
            set_params(snap, theta);
            opts.hook(0, step, snap);
        };
    }
    OptimResult res;
    try {
        res = minimize(objective, get_params(model), cfg, opts.deterministic, observer);
    } catch (const DegenerateFactorError& e) {
        throw DegenerateFactorError(std::string("macro problem: ") + e.what(), e.last_good());
    } catch (const TrainingError& e) {
        throw TrainingError(std::string("macro problem: ") + e.what(), e.last_good());
    }
    set_params(model, res.best);
    MacroSolution sol;
    sol.u0 = wrap_macro(problem, model);
    sol.history = std::move(res.history);
    sol.loss = std::sqrt(std::max(res.best_value, 0.0));
    sol.route = assembler.route();
    sol.model = std::move(model);
    sol.structure = macro_structure(problem, sol.model);
    return sol;
}

std::vector<double> gradient_field(const PointTnn& u, const std::vector<Interval1D>& domain,
                                   std::span<const double> x)
{
    if (x.size() != domain.size() || u.dims().size() != domain.size()) {
        throw UsageError("gradient_field: expected one coordinate per slow dimension");
    }
    for (std::size_t a = 0; a < x.size(); ++a) {
        if (!domain[a].contains(x[a])) {
            throw UsageError("gradient_field: point outside the domain");
        }
    }
    const auto e = u.eval(x);
    return {e.grad.data(), e.grad.data() + e.grad.size()};
}

namespace {

// (A, dA/dx, d2A/dx2) of a closed-form expression at a point, derivative along `dim`.
std::array<double, 3> value_and_x_derivs(const SeparableExpr& expr, std::span<const double> pt, int dim)
{
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (const auto& t : expr.terms) {
        double rest = t.scale;
        std::array<double, 3> own{1.0, 0.0, 0.0};
        for (const auto& [d, prim] : t.factors) {
            const auto e = prim.eval(pt[static_cast<std::size_t>(d)]);
            if (d == dim) {
                own = {own[0] * e[0], own[1] * e[0] + own[0] * e[1], own[2] * e[0] + 2.0 * own[1] * e[1] + own[0] * e[2]};
            } else {
                rest *= e[0];
            }
        }
        for (int k = 0; k < 3; ++k) {
            out[static_cast<std::size_t>(k)] += rest * own[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

}  // namespace

SampledCoefficient harmonic_macro_coefficient(const TensorCoefficient& coeff, const TensorGrid& grid)
{
    if (coeff.d != 1 || grid.d() != 1 || coeff.K != grid.K()) {
        throw UsageError("harmonic_macro_coefficient: one-dimensional coefficients only");
    }
    // Smooth periodic integrand: the uniform rectangle rule converges spectrally.
    const int m = coeff.K == 1 ? 256 : 64;
    const int K = coeff.K;
    long long total = 1;
    for (int g = 0; g < K; ++g) {
        total *= m;
    }
    const auto& xs = grid.rule(0).nodes();
    const auto n = static_cast<Eigen::Index>(xs.size());
    Factor<Mat> fac{Mat(1, n), Mat(1, n), Mat(1, n)};
    std::vector<double> pt(static_cast<std::size_t>(K + 1), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        pt[0] = xs[static_cast<std::size_t>(i)];
        double g0 = 0.0;
        double g1 = 0.0;
        double g2 = 0.0;
        for (long long flat = 0; flat < total; ++flat) {
            long long r = flat;
            for (int g = 1; g <= K; ++g) {
                pt[static_cast<std::size_t>(g)] = (static_cast<double>(r % m) + 0.5) / m;
                r /= m;
            }
            const auto a = value_and_x_derivs(coeff.entry(0, 0), pt, 0);
            if (!(a[0] > 0.0)) {
                throw EllipticityError("harmonic_macro_coefficient: coefficient not positive");
            }
            g0 += 1.0 / a[0];
            g1 -= a[1] / (a[0] * a[0]);
            g2 += 2.0 * a[1] * a[1] / (a[0] * a[0] * a[0]) - a[2] / (a[0] * a[0]);
        }
        g0 /= static_cast<double>(total);
        g1 /= static_cast<double>(total);
        g2 /= static_cast<double>(total);
        fac.values(0, i) = 1.0 / g0;
        fac.d1->coeffRef(0, i) = -g1 / (g0 * g0);
        fac.d2->coeffRef(0, i) = (2.0 * g1 * g1 - g0 * g2) / (g0 * g0 * g0);
    }
    Separable s;
    s.grid = &grid;
    s.dims = {0};
    s.coeffs = Mat::Ones(1, 1);
    s.factors.push_back(std::move(fac));
    s.flat.push_back({0});
    SampledCoefficient out;
    out.d = 1;
    out.entries = {s};
    return out;
}

MultiscaleSolution::MultiscaleSolution(const TensorGrid& grid, int d, std::vector<Interval1D> domain, PointTnn u0,
                                       std::vector<std::vector<PointTnn>> correctors, double eps)
    : d_(d), total_dims_(grid.total_dims()), domain_(std::move(domain)), u0_(std::move(u0)),
      chi_(std::move(correctors)), eps_(eps)
{
    if (!(eps > 0.0 && eps < 1.0)) {
        throw UsageError("reconstruct: epsilon must lie in (0, 1)");
    }
    if (chi_.size() > 2) {
        throw UsageError("reconstruct: at most two fast scales are supported");
    }
    if (static_cast<int>(chi_.size()) != grid.K() || static_cast<int>(domain_.size()) != d) {
        throw UsageError("reconstruct: corrector list or domain does not match the grid");
    }
    for (const auto& level : chi_) {
        if (static_cast<int>(level.size()) != d) {
            throw UsageError("reconstruct: need one corrector per direction and scale");
        }
    }
}

namespace {

struct GlobalEval {
    double value = 0.0;
    Vec grad;   // over all global dims
    Mat hess;
};

GlobalEval eval_global(const PointTnn& f, const std::vector<double>& P, bool hessian)
{
    const auto& dims = f.dims();
    std::vector<double> local(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
        local[k] = P[static_cast<std::size_t>(dims[k])];
    }
    const auto e = f.eval(local, hessian);
    const auto T = static_cast<Eigen::Index>(P.size());
    GlobalEval g;
    g.value = e.value;
    g.grad = Vec::Zero(T);
    if (hessian) {
        g.hess = Mat::Zero(T, T);
    }
    for (std::size_t a = 0; a < dims.size(); ++a) {
        g.grad(dims[a]) = e.grad(static_cast<Eigen::Index>(a));
        if (hessian) {
            for (std::size_t b = 0; b < dims.size(); ++b) {
                g.hess(dims[a], dims[b]) = e.hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        }
    }
    return g;
}

}  // namespace

MultiscaleSolution::Point MultiscaleSolution::eval(std::span<const double> x, bool gradients) const
{
    if (static_cast<int>(x.size()) != d_) {
        throw UsageError("MultiscaleSolution::eval: expected one coordinate per axis");
    }
    for (int a = 0; a < d_; ++a) {
        if (!domain_[static_cast<std::size_t>(a)].contains(x[static_cast<std::size_t>(a)])) {
            throw UsageError("MultiscaleSolution::eval: point outside the domain");
        }
    }
    const int K = this->K();
    const auto T = static_cast<Eigen::Index>(total_dims_);
    std::vector<double> P(static_cast<std::size_t>(total_dims_));
    for (int a = 0; a < d_; ++a) {
        const double xa = x[static_cast<std::size_t>(a)];
        P[static_cast<std::size_t>(a)] = xa;
        double s = 1.0;
        for (int g = 1; g <= K; ++g) {
            s /= eps_;
            const double y = xa * s;
            P[static_cast<std::size_t>(g * d_ + a)] = y - std::floor(y);
        }
    }
    const GlobalEval e0 = eval_global(u0_, P, gradients);
    // Partials of grad u0 along every global dim: only slow dims contribute.
    auto dg0 = [&](int j, Eigen::Index X) { return X < d_ && gradients ? e0.hess(j, X) : 0.0; };

    Point out;
    out.u0 = e0.value;
    Vec du1 = Vec::Zero(T);
    Vec du2 = Vec::Zero(T);
    std::vector<GlobalEval> c1;
    if (K >= 1) {
        for (int j = 0; j < d_; ++j) {
            c1.push_back(eval_global(chi_[0][static_cast<std::size_t>(j)], P, gradients));
            out.u1 += c1.back().value * e0.grad(j);
        }
        if (gradients) {
            for (Eigen::Index X = 0; X < T; ++X) {
                for (int j = 0; j < d_; ++j) {
                    du1(X) += c1[static_cast<std::size_t>(j)].grad(X) * e0.grad(j) +
                              c1[static_cast<std::size_t>(j)].value * dg0(j, X);
                }
            }
        }
    }
    if (K >= 2) {
        std::vector<double> M(static_cast<std::size_t>(d_));
        for (int j = 0; j < d_; ++j) {
            const Eigen::Index yj = d_ + j;
            double m = e0.grad(j);
            for (int l = 0; l < d_; ++l) {
                m += c1[static_cast<std::size_t>(l)].grad(yj) * e0.grad(l);
            }
            M[static_cast<std::size_t>(j)] = m;
        }
        for (int j = 0; j < d_; ++j) {
            const GlobalEval c2 = eval_global(chi_[1][static_cast<std::size_t>(j)], P, gradients);
            out.u2 += c2.value * M[static_cast<std::size_t>(j)];
            if (!gradients) {
                continue;
            }
            const Eigen::Index yj = d_ + j;
            for (Eigen::Index X = 0; X < T; ++X) {
                double dM = dg0(j, X);
                for (int l = 0; l < d_; ++l) {
                    dM += c1[static_cast<std::size_t>(l)].hess(yj, X) * e0.grad(l) +
                          c1[static_cast<std::size_t>(l)].grad(yj) * dg0(l, X);
                }
                du2(X) += c2.grad(X) * M[static_cast<std::size_t>(j)] + c2.value * dM;
            }
        }
    }
    out.u_eps = out.u0 + eps_ * out.u1 + eps_ * eps_ * out.u2;
    if (gradients) {
        out.grad.assign(static_cast<std::size_t>(d_), 0.0);
        out.grad_leading.assign(static_cast<std::size_t>(d_), 0.0);
        for (int a = 0; a < d_; ++a) {
            double full = e0.grad(a);
            double lead = e0.grad(a);
            double scale = 1.0;
            for (int g = 0; g <= K; ++g) {
                const Eigen::Index X = g * d_ + a;
                // d/dx_a picks up eps^-g from the argument x/eps^g.
                full += scale * (eps_ * du1(X) + eps_ * eps_ * du2(X));
                if (g == 1) {
                    lead += du1(X);
                } else if (g == 2) {
                    lead += du2(X);
                }
                scale /= eps_;
            }
            out.grad[static_cast<std::size_t>(a)] = full;
            out.grad_leading[static_cast<std::size_t>(a)] = lead;
        }
    }
    return out;
}

void MultiscaleSolution::write_csv(std::ostream& os, int n) const
{
    if (n < 2) {
        throw UsageError("write_csv: need at least two points per axis");
    }
    const int K = this->K();
    os << (d_ == 1 ? "x" : "x,y") << ",u0,u1" << (K >= 2 ? ",u2" : "") << ",u_eps\n";
    os << std::setprecision(12);
    auto row = [&](std::span<const double> x) {
        const auto p = eval(x, false);
        for (double v : x) {
            os << v << ',';
        }
        os << p.u0 << ',' << p.u1 << ',';
        if (K >= 2) {
            os << p.u2 << ',';
        }
        os << p.u_eps << '\n';
    };
    auto coord = [&](int a, int i) {
        const auto& iv = domain_[static_cast<std::size_t>(a)];
        return i == n - 1 ? iv.hi : iv.lo + iv.length() * i / (n - 1);
    };
    if (d_ == 1) {
        for (int i = 0; i < n; ++i) {
            const double x = coord(0, i);
            row(std::span<const double>(&x, 1));
        }
    } else {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                const double x[2] = {coord(0, i), coord(1, j)};
                row(x);
            }
        }
    }
}

void MultiscaleSolution::write_csv(const std::string& path, int n) const
{
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write '" + path + "'");
    }
    write_csv(os, n);
}

MultiscaleSolution reconstruct(const MacroProblem& problem, const MacroSolution& macro, const Homogenization& hom,
                               double eps)
{
    std::vector<std::vector<PointTnn>> chi;
    for (auto it = hom.cells.rbegin(); it != hom.cells.rend(); ++it) {
        std::vector<PointTnn> level;
        for (int j = 0; j < problem.d; ++j) {
            level.push_back(it->evaluator(j));
        }
        chi.push_back(std::move(level));
    }
    return MultiscaleSolution(*problem.grid, problem.d, problem.domain, macro.evaluator(problem), std::move(chi), eps);
}

}  // namespace tenshom
