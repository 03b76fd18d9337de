#include "tenshom/homogenize.hpp"

#include "tenshom/error.hpp"

#include <cmath>
#include <set>

namespace tenshom {

CellProblem make_cell_problem(const SampledCoefficient& coeff, const TensorGrid& grid, int fast_group)
{
    if (fast_group < 1 || fast_group > grid.K()) {
        throw UsageError("make_cell_problem: fast group out of range");
    }
    CellProblem p;
    p.grid = &grid;
    p.d = coeff.d;
    p.fast_group = fast_group;
    p.fast_dims = grid.group_dims(fast_group);
    p.coeff = coeff;
    std::set<int> dims(p.fast_dims.begin(), p.fast_dims.end());
    for (int d : coeff.dims()) {
        if (grid.label(d).group > fast_group) {
            throw UsageError("make_cell_problem: coefficient depends on a finer scale than the cell group");
        }
        dims.insert(d);
    }
    p.dims.assign(dims.begin(), dims.end());
    for (const auto& e : p.coeff.entries) {
        if (e.grid != &grid) {
            throw UsageError("make_cell_problem: coefficient sampled on a different grid");
        }
    }
    return p;
}

ResidualSpec cell_residual(const CellProblem& problem, int j)
{
    if (j < 0 || j >= problem.d) {
        throw UsageError("cell_residual: direction out of range");
    }
    std::vector<std::pair<double, Separable>> forcing;
    for (int i = 0; i < problem.d; ++i) {
        const Separable& aij = problem.coeff.entry(i, j);
        if (is_zero(aij)) {
            continue;
        }
        const Separable da = derivative(aij, problem.fast_dims[static_cast<std::size_t>(i)]);
        if (!is_zero(da)) {
            forcing.emplace_back(1.0, broadcast(da, problem.dims));
        }
    }
    std::optional<Separable> constant;
    if (!forcing.empty()) {
        constant = combine(forcing);
    }
    return divergence_residual(problem.coeff, problem.fast_dims, problem.dims, constant);
}

std::vector<SubnetworkSpec> cell_subnet_specs(const CellProblem& problem, const TrainConfig& cfg)
{
    std::vector<SubnetworkSpec> specs;
    for (int d : problem.dims) {
        SubnetworkSpec s;
        s.hidden = cfg.widths;
        s.periodic = problem.grid->label(d).is_fast();
        if (s.periodic) {
            s.frequencies = cfg.resolved_frequencies();
        }
        specs.push_back(s);
    }
    return specs;
}

TapedSeparable wrap_corrector(const CellProblem& problem, const TnnModel& m, const TnnLeaves& leaves)
{
    if (m.dims != problem.dims) {
        throw UsageError("wrap_corrector: model dimensions differ from the cell dimensions");
    }
    return apply_mean_zero(eval_factor_tables(m, leaves, *problem.grid, 2), problem.fast_dims);
}

Separable wrap_corrector(const CellProblem& problem, const TnnModel& m)
{
    ad::Tape tape;
    const TnnLeaves lv = make_leaves(m, tape, false);
    return freeze(wrap_corrector(problem, m, lv));
}

ad::Var assemble_cell_loss(const CellProblem& problem, const TapedSeparable& psi_hat, int j, LossRoute route)
{
    const ResidualAssembler assembler(cell_residual(problem, j), psi_hat.rank() / 2, route);
    return ad::sqrt(assembler.squared(psi_hat));
}

StructuralReport cell_structure(const CellProblem& problem, const TnnModel& m)
{
    StructuralReport rep;
    const Separable raw = eval_factor_tables(m, *problem.grid, 0);
    for (std::size_t k = 0; k < m.dims.size(); ++k) {
        const Vec w = detail::weights_vec(*problem.grid, m.dims[k]);
        const Vec nrm = (raw.factors[k].values.array().square().matrix() * w).array().sqrt().matrix();
        rep.norm_deviation = std::max(rep.norm_deviation, (nrm.array() - 1.0).abs().maxCoeff());
        if (m.subnets[k].spec.periodic) {
            const std::vector<double> ends{0.0, 1.0};
            const auto ch = subnet_channels(m.subnets[k], ends, 2);
            for (int c = 0; c < 3; ++c) {
                rep.periodicity = std::max(rep.periodicity, (ch[static_cast<std::size_t>(c)].col(0) -
                                                             ch[static_cast<std::size_t>(c)].col(1))
                                                                .cwiseAbs()
                                                                .maxCoeff());
            }
        }
    }
    const Separable psi = wrap_corrector(problem, m);
    const Separable mean = partial_integrate(psi, problem.fast_dims);
    double worst = 0.0;
    if (mean.dims.empty()) {
        worst = std::abs(scalar_value(mean));
    } else {
        for (double v : dense_eval_oracle(mean)) {
            worst = std::max(worst, std::abs(v));
        }
    }
    const double nrm = std::sqrt(std::max(l2_norm_sq(psi), 0.0));
    rep.mean_zero = nrm > 0.0 ? worst / nrm : worst;
    return rep;
}

PointTnn CellSolution::evaluator(int j) const
{
    return PointTnn(directions.at(static_cast<std::size_t>(j)).model, *problem.grid, problem.fast_dims);
}

CellSolution train_cell(const CellProblem& problem, const TrainConfig& cfg, const TrainOptions& opts)
{
    cfg.validate();
    CellSolution sol;
    sol.problem = problem;
    const auto specs = cell_subnet_specs(problem, cfg);
    for (int j = 0; j < problem.d; ++j) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(j) * 7919u +
                                   static_cast<std::uint64_t>(problem.fast_group - 1) * 104729u;
        TnnModel model = init_model(problem.dims, specs, cfg.p, seed);
        const ResidualAssembler assembler(cell_residual(problem, j), cfg.p, cfg.route);
        TnnModel work = model;
        const Objective objective = [&](std::span<const double> theta, std::span<double> grad) {
            set_params(work, theta);
            ad::Tape tape;
            const TnnLeaves lv = make_leaves(work, tape, true);
            const ad::Var sq = assembler.squared(wrap_corrector(problem, work, lv));
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
                opts.hook(j, step, snap);
            };
        }
        OptimResult res;
        try {
            res = minimize(objective, get_params(model), cfg, opts.deterministic, observer);
        } catch (const DegenerateFactorError& e) {
            throw DegenerateFactorError("cell group " + std::to_string(problem.fast_group) + " direction " +
                                            std::to_string(j + 1) + ": " + e.what(),
                                        e.last_good());
        } catch (const TrainingError& e) {
            throw TrainingError("cell group " + std::to_string(problem.fast_group) + " direction " +
                                    std::to_string(j + 1) + ": " + e.what(),
                                e.last_good());
        }
        set_params(model, res.best);
        DirectionSolution ds;
        ds.j = j;
        ds.chi = wrap_corrector(problem, model);
        ds.history = std::move(res.history);
        ds.loss = std::sqrt(std::max(res.best_value, 0.0));
        ds.route = assembler.route();
        ds.structure = cell_structure(problem, model);
        ds.model = std::move(model);
        sol.directions.push_back(std::move(ds));
    }
    return sol;
}

HomogenizedCoefficient compute_homogenized_coefficient(const CellProblem& problem, const CellSolution& solution,
                                                       double gamma)
{
    if (static_cast<int>(solution.directions.size()) != problem.d) {
        throw UsageError("compute_homogenized_coefficient: need one trained corrector per direction");
    }
    const TensorGrid& grid = *problem.grid;
    HomogenizedCoefficient out;
    for (int dim : problem.dims) {
        if (std::find(problem.fast_dims.begin(), problem.fast_dims.end(), dim) == problem.fast_dims.end()) {
            out.dims.push_back(dim);
        }
    }
    std::vector<Separable> raw;
    for (int i = 0; i < problem.d; ++i) {
        for (int j = 0; j < problem.d; ++j) {
            std::vector<std::pair<double, Separable>> parts;
            const Separable& aij = problem.coeff.entry(i, j);
            if (!is_zero(aij)) {
                parts.emplace_back(1.0, broadcast(aij, problem.dims));
            }
            const Separable& chi = solution.directions[static_cast<std::size_t>(j)].chi;
            for (int k = 0; k < problem.d; ++k) {
                const Separable& aik = problem.coeff.entry(i, k);
                if (is_zero(aik)) {
                    continue;
                }
                const Separable dchi = derivative(chi, problem.fast_dims[static_cast<std::size_t>(k)]);
                if (dchi.rank() == 0) {
                    continue;
                }
                parts.emplace_back(1.0, multiply(compress(aik), dchi));
            }
            Separable e;
            if (parts.empty()) {
                e = broadcast(separable_scalar(grid, Mat(), 0.0), out.dims);
            } else {
                e = compress(partial_integrate(combine(parts), problem.fast_dims));
            }
            raw.push_back(std::move(e));
        }
    }
    out.a.d = problem.d;
    if (problem.d == 1) {
        out.a.entries = raw;
    } else {
        const Separable diff = combine<Mat>({{1.0, raw[1]}, {-1.0, raw[2]}});
        double total = 0.0;
        for (const auto& e : raw) {
            total += l2_norm_sq(e);
        }
        out.asymmetry = total > 0.0 ? std::sqrt(std::max(l2_norm_sq(diff), 0.0) / total) : 0.0;
        const Separable sym = compress(combine<Mat>({{0.5, raw[1]}, {0.5, raw[2]}}));
        out.a.entries = {raw[0], sym, sym, raw[3]};
    }
    out.ellipticity = check_ellipticity(out.a, grid, gamma);
    return out;
}

Homogenization homogenize_recursive(const TensorCoefficient& coeff, const TensorGrid& grid,
                                    const std::vector<TrainConfig>& stage_cfg, const TrainOptions& opts)
{
    if (coeff.K != grid.K() || coeff.d != grid.d()) {
        throw UsageError("homogenize_recursive: coefficient and grid disagree on d or K");
    }
    if (static_cast<int>(stage_cfg.size()) != coeff.K) {
        throw ConfigError("homogenize_recursive: one training configuration per scale group is required");
    }
    Homogenization h;
    SampledCoefficient current = sample_coefficient(coeff, grid);
    for (int s = 0; s < coeff.K; ++s) {
        const int group = coeff.K - s;
        const CellProblem cell = make_cell_problem(current, grid, group);
        CellSolution sol = train_cell(cell, stage_cfg[static_cast<std::size_t>(s)], opts);
        HomogenizedCoefficient hc = compute_homogenized_coefficient(cell, sol, coeff.gamma);
        current = hc.a;
        h.cells.push_back(std::move(sol));
        h.stages.push_back(std::move(hc));
    }
    h.a0 = h.stages.back();
    return h;
}

double relative_l2_error(const Separable& f, const Tabulated& oracle)
{
    const Separable g = broadcast(f, oracle.dims);
    if (g.dims != oracle.dims) {
        throw UsageError("relative_l2_error: oracle dimensions must be ascending and cover the function");
    }
    std::vector<double> vals;
    if (g.dims.empty()) {
        vals = {scalar_value(g)};
    } else {
        vals = dense_eval_oracle(g);
    }
    if (vals.size() != oracle.values.size()) {
        throw UsageError("relative_l2_error: node count mismatch");
    }
    const std::size_t nd = oracle.dims.size();
    std::vector<std::size_t> idx(nd, 0);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t flat = 0; flat < vals.size(); ++flat) {
        double w = 1.0;
        for (std::size_t k = 0; k < nd; ++k) {
            w *= f.grid->rule(oracle.dims[k]).weights()[idx[k]];
        }
        const double diff = vals[flat] - oracle.values[flat];
        num += w * diff * diff;
        den += w * oracle.values[flat] * oracle.values[flat];
        for (std::size_t k = nd; k-- > 0;) {
            if (++idx[k] < static_cast<std::size_t>(oracle.shape[k])) {
                break;
            }
            idx[k] = 0;
        }
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace tenshom
