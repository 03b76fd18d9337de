#include "tenshom/pipeline.hpp"

#include "tenshom/diagnostics.hpp"
#include "tenshom/error.hpp"
#include "tenshom/fem_ref.hpp"
#include "tenshom/homogenize.hpp"
#include "tenshom/macro_solver.hpp"
#include "tenshom/residual.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace tenshom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) {
        throw ConfigError(where + ": expected a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) {
            throw ConfigError(where + ": unknown key '" + k + "'");
        }
    }
}

GridAxisSpec axis_from_json(const json& j, GridAxisSpec def, const std::string& where)
{
    check_keys(j, {"n_sub", "n_pts"}, where);
    def.n_sub = j.value("n_sub", def.n_sub);
    def.n_pts = j.value("n_pts", def.n_pts);
    return def;
}

json axis_to_json(const GridAxisSpec& a) { return {{"n_sub", a.n_sub}, {"n_pts", a.n_pts}}; }

std::string group_name(int g) { return g == 0 ? "x" : "y" + std::to_string(g); }

std::string fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4e", v);
    return buf;
}

std::string eps_tag(double eps)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", eps);
    return buf;
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream os(p, std::ios::binary);
    if (!os) {
        throw ConfigError("cannot write " + p.string());
    }
    os << text;
}

json structure_json(const StructuralReport& r)
{
    return {{"periodicity", r.periodicity},
            {"norm_deviation", r.norm_deviation},
            {"mean_zero", r.mean_zero},
            {"boundary", r.boundary}};
}

StructuralReport structure_from_json(const json& j)
{
    StructuralReport r;
    r.periodicity = j.value("periodicity", 0.0);
    r.norm_deviation = j.value("norm_deviation", 0.0);
    r.mean_zero = j.value("mean_zero", 0.0);
    r.boundary = j.value("boundary", 0.0);
    return r;
}

void merge_max(StructuralReport& a, const StructuralReport& b)
{
    a.periodicity = std::max(a.periodicity, b.periodicity);
    a.norm_deviation = std::max(a.norm_deviation, b.norm_deviation);
    a.mean_zero = std::max(a.mean_zero, b.mean_zero);
    a.boundary = std::max(a.boundary, b.boundary);
}

/// Rethrows with the stage name prefixed, preserving the error type (and so the exit code).
template <class F>
auto in_stage(const std::string& name, F&& f)
{
    const std::string pre = "stage '" + name + "': ";
    try {
        return f();
    } catch (const DegenerateFactorError& e) {
        throw DegenerateFactorError(pre + e.what(), e.last_good());
    } catch (const TrainingError& e) {
        throw TrainingError(pre + e.what(), e.last_good());
    } catch (const ConfigError& e) {
        throw ConfigError(pre + e.what());
    } catch (const EllipticityError& e) {
        throw EllipticityError(pre + e.what());
    } catch (const ReferenceError& e) {
        throw ReferenceError(pre + e.what());
    } catch (const UsageError& e) {
        throw UsageError(pre + e.what());
    } catch (const InternalError& e) {
        throw InternalError(pre + e.what());
    }
}

std::optional<json> load_checkpoint(const fs::path& p, const std::string& fingerprint)
{
    std::ifstream is(p);
    if (!is) {
        return std::nullopt;
    }
    try {
        json j = json::parse(is);
        if (j.value("fingerprint", std::string()) != fingerprint) {
            return std::nullopt;
        }
        return j;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

/// Harmonic mean of the coefficient over all fast variables at slow point x (d = 1).
double harmonic_at(const TensorCoefficient& c, double x)
{
    const int n = c.K == 1 ? 256 : 64;
    std::vector<double> pt(static_cast<std::size_t>(c.K + 1), x);
    double s = 0.0;
    if (c.K == 1) {
        for (int i = 0; i < n; ++i) {
            pt[1] = (i + 0.5) / n;
            s += 1.0 / c.entry(0, 0).value(pt);
        }
        return n / s;
    }
    for (int i = 0; i < n; ++i) {
        pt[1] = (i + 0.5) / n;
        for (int k = 0; k < n; ++k) {
            pt[2] = (k + 0.5) / n;
            s += 1.0 / c.entry(0, 0).value(pt);
        }
    }
    return static_cast<double>(n) * n / s;
}

/// Values of f tabulated on the node product of `dims` (last dim fastest).
std::vector<double> tabulate(const Separable& f, const std::vector<int>& dims)
{
    if (dims.empty()) {
        return {scalar_value(f)};
    }
    return dense_eval_oracle(broadcast(f, dims));
}

void write_coefficient_table(const fs::path& p, const HomogenizedCoefficient& hc, const TensorGrid& grid, int d,
                             const std::vector<double>* oracle)
{
    std::ostringstream os;
    for (int dim : hc.dims) {
        os << dim_name(dim, d) << ',';
    }
    if (d == 1) {
        os << "a11";
    } else {
        os << "a11,a12,a22";
    }
    if (oracle) {
        os << ",oracle";
    }
    os << '\n';
    std::vector<std::vector<double>> cols;
    cols.push_back(tabulate(hc.a.entry(0, 0), hc.dims));
    if (d == 2) {
        cols.push_back(tabulate(hc.a.entry(0, 1), hc.dims));
        cols.push_back(tabulate(hc.a.entry(1, 1), hc.dims));
    }
    std::vector<std::size_t> idx(hc.dims.size(), 0);
    for (std::size_t row = 0; row < cols[0].size(); ++row) {
        for (std::size_t k = 0; k < hc.dims.size(); ++k) {
            os << num(grid.rule(hc.dims[k]).nodes()[idx[k]]) << ',';
        }
        for (std::size_t c = 0; c < cols.size(); ++c) {
            os << (c ? "," : "") << num(cols[c][row]);
        }
        if (oracle) {
            os << ',' << num((*oracle)[row]);
        }
        os << '\n';
        for (std::size_t k = hc.dims.size(); k-- > 0;) {
            if (++idx[k] < grid.rule(hc.dims[k]).size()) {
                break;
            }
            idx[k] = 0;
        }
    }
    write_file(p, os.str());
}

/// Coordinates of model dims taken from a global point.
std::vector<double> gather(const std::vector<int>& dims, const std::vector<double>& global)
{
    std::vector<double> v;
    v.reserve(dims.size());
    for (int dim : dims) {
        v.push_back(global[static_cast<std::size_t>(dim)]);
    }
    return v;
}

double secs_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string dim_name(int dim, int d)
{
    const int g = dim / d;
    const int a = dim % d;
    if (d == 1) {
        return group_name(g);
    }
    return g == 0 ? "x" + std::to_string(a + 1) : group_name(g) + "_" + std::to_string(a + 1);
}

std::string to_string(Stage s)
{
    switch (s) {
    case Stage::cell: return "cell";
    case Stage::homogenize: return "homogenize";
    case Stage::macro: return "macro";
    case Stage::reconstruct: return "reconstruct";
    case Stage::compare: return "compare-fem";
    }
    return "?";
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& defaults)
{
    check_keys(j,
               {"optimizer", "lr_adam", "steps_adam", "lr_lbfgs", "steps_lbfgs", "history", "p", "widths",
                "log_every", "route", "frequencies"},
               "train");
    TrainConfig c = defaults;
    try {
        c.lr_adam = j.value("lr_adam", c.lr_adam);
        c.steps_adam = j.value("steps_adam", c.steps_adam);
        c.lr_lbfgs = j.value("lr_lbfgs", c.lr_lbfgs);
        c.steps_lbfgs = j.value("steps_lbfgs", c.steps_lbfgs);
        c.history = j.value("history", c.history);
        c.p = j.value("p", c.p);
        c.widths = j.value("widths", c.widths);
        c.log_every = j.value("log_every", c.log_every);
        c.frequencies = j.value("frequencies", c.frequencies);
        if (j.contains("route")) {
            c.route = loss_route_from_string(j.at("route").get<std::string>());
        }
        if (j.contains("optimizer")) {
            const auto o = j.at("optimizer").get<std::string>();
            if (o == "adam") {
                c.optimizer = TrainConfig::Optimizer::adam;
            } else if (o == "adam_then_lbfgs") {
                c.optimizer = TrainConfig::Optimizer::adam_then_lbfgs;
            } else {
                throw ConfigError("train: unknown optimizer '" + o + "'");
            }
        } else if (c.steps_lbfgs > 0) {
            c.optimizer = TrainConfig::Optimizer::adam_then_lbfgs;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return c;
}

json train_config_to_json(const TrainConfig& c)
{
    return {{"optimizer", c.optimizer == TrainConfig::Optimizer::adam ? "adam" : "adam_then_lbfgs"},
            {"lr_adam", c.lr_adam},
            {"steps_adam", c.steps_adam},
            {"lr_lbfgs", c.lr_lbfgs},
            {"steps_lbfgs", c.steps_lbfgs},
            {"history", c.history},
            {"p", c.p},
            {"widths", c.widths},
            {"log_every", c.log_every},
            {"route", to_string(c.route)},
            {"frequencies", c.frequencies}};
}

PipelineConfig config_from_json(const json& j)
{
    check_keys(j,
               {"problem", "custom", "K", "d", "grid", "train", "eps", "fem", "out", "deterministic", "seed",
                "macro_a0", "plot_points", "checkpoint_every", "reuse_checkpoints"},
               "config");
    PipelineConfig c;
    try {
        c.problem = j.value("problem", c.problem);
        if (j.contains("custom")) {
            c.custom = j.at("custom");
        }
        if (c.problem == "custom") {
            if (!c.custom) {
                throw ConfigError("config: problem 'custom' needs a 'custom' object");
            }
            c.d = c.custom->value("d", 1);
            c.K = c.custom->value("K", 1);
        } else {
            const Problem p = builtin(c.problem);
            c.d = p.d;
            c.K = p.K;
        }
        c.d = j.value("d", c.d);
        c.K = j.value("K", c.K);
        if (c.K < 1 || c.K > 2 || c.d < 1 || c.d > 2) {
            throw ConfigError("config: K and d must each be 1 or 2");
        }

        c.grid.assign(static_cast<std::size_t>(c.K + 1), GridAxisSpec{});
        if (j.contains("grid")) {
            const json& g = j.at("grid");
            std::set<std::string> keys{"overrides"};
            for (int k = 0; k <= c.K; ++k) {
                keys.insert(group_name(k));
            }
            check_keys(g, keys, "grid");
            for (int k = 0; k <= c.K; ++k) {
                if (g.contains(group_name(k))) {
                    c.grid[static_cast<std::size_t>(k)] =
                        axis_from_json(g.at(group_name(k)), GridAxisSpec{}, "grid." + group_name(k));
                }
            }
            if (g.contains("overrides")) {
                for (const auto& [name, spec] : g.at("overrides").items()) {
                    const int dim = dim_from_name(name, c.d);
                    if (dim >= (c.K + 1) * c.d) {
                        throw ConfigError("grid.overrides: '" + name + "' is not a dimension of this problem");
                    }
                    c.grid_overrides[name] =
                        axis_from_json(spec, c.grid[static_cast<std::size_t>(dim / c.d)], "grid.overrides." + name);
                }
            }
        }

        c.cell.assign(static_cast<std::size_t>(c.K), TrainConfig{});
        if (j.contains("train")) {
            const json& t = j.at("train");
            check_keys(t, {"cell", "macro"}, "train");
            if (t.contains("cell")) {
                const json& tc = t.at("cell");
                if (tc.is_array()) {
                    if (tc.size() != static_cast<std::size_t>(c.K)) {
                        throw ConfigError("train.cell: expected " + std::to_string(c.K) + " stage configs");
                    }
                    for (std::size_t s = 0; s < tc.size(); ++s) {
                        c.cell[s] = train_config_from_json(tc[s]);
                    }
                } else {
                    for (auto& s : c.cell) {
                        s = train_config_from_json(tc);
                    }
                }
            }
            if (t.contains("macro")) {
                c.macro = train_config_from_json(t.at("macro"));
            }
        }

        c.eps = j.value("eps", c.eps);
        if (j.contains("fem")) {
            const json& f = j.at("fem");
            check_keys(f, {"n_1d", "n_2d", "n_u0", "cell_n_el", "slice_points", "cache_dir"}, "fem");
            c.fem.n_1d = f.value("n_1d", c.fem.n_1d);
            c.fem.n_2d = f.value("n_2d", c.fem.n_2d);
            c.fem.n_u0 = f.value("n_u0", c.fem.n_u0);
            c.fem.cell_n_el = f.value("cell_n_el", c.fem.cell_n_el);
            c.fem.slice_points = f.value("slice_points", c.fem.slice_points);
            c.fem.cache_dir = f.value("cache_dir", c.fem.cache_dir);
        }
        c.out = j.value("out", c.out);
        c.deterministic = j.value("deterministic", c.deterministic);
        c.seed = j.value("seed", c.seed);
        c.macro_a0 = j.value("macro_a0", c.macro_a0);
        c.plot_points = j.value("plot_points", c.plot_points);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.reuse_checkpoints = j.value("reuse_checkpoints", c.reuse_checkpoints);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

json config_to_json(const PipelineConfig& c)
{
    json j;
    j["problem"] = c.problem;
    if (c.custom) {
        j["custom"] = *c.custom;
    }
    j["K"] = c.K;
    j["d"] = c.d;
    json g = json::object();
    for (int k = 0; k <= c.K; ++k) {
        g[group_name(k)] = axis_to_json(c.grid[static_cast<std::size_t>(k)]);
    }
    if (!c.grid_overrides.empty()) {
        json o = json::object();
        for (const auto& [name, spec] : c.grid_overrides) {
            o[name] = axis_to_json(spec);
        }
        g["overrides"] = o;
    }
    j["grid"] = g;
    json cells = json::array();
    for (const auto& s : c.cell) {
        cells.push_back(train_config_to_json(s));
    }
    j["train"] = {{"cell", cells}, {"macro", train_config_to_json(c.macro)}};
    j["eps"] = c.eps;
    j["fem"] = {{"n_1d", c.fem.n_1d},           {"n_2d", c.fem.n_2d},
                {"n_u0", c.fem.n_u0},           {"cell_n_el", c.fem.cell_n_el},
                {"slice_points", c.fem.slice_points}, {"cache_dir", c.fem.cache_dir}};
    j["out"] = c.out;
    j["deterministic"] = c.deterministic;
    j["seed"] = c.seed;
    j["macro_a0"] = c.macro_a0;
    j["plot_points"] = c.plot_points;
    j["checkpoint_every"] = c.checkpoint_every;
    j["reuse_checkpoints"] = c.reuse_checkpoints;
    return j;
}

PipelineConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open config '" + path + "'");
    }
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

bool PipelineConfig::operator==(const PipelineConfig& o) const { return config_to_json(*this) == config_to_json(o); }

void PipelineConfig::validate() const
{
    if (K < 1 || K > 2 || d < 1 || d > 2) {
        throw ConfigError("config: K and d must each be 1 or 2");
    }
    const Problem p = resolve_problem();
    if (p.K != K || p.d != d) {
        throw ConfigError("config: problem '" + p.name + "' has d = " + std::to_string(p.d) + ", K = " +
                          std::to_string(p.K));
    }
    if (grid.size() != static_cast<std::size_t>(K + 1)) {
        throw ConfigError("config: one grid entry per scale group is required");
    }
    for (const auto& [name, spec] : grid_overrides) {
        if (dim_from_name(name, d) >= (K + 1) * d) {
            throw ConfigError("grid.overrides: '" + name + "' is not a dimension of this problem");
        }
    }
    if (cell.size() != static_cast<std::size_t>(K)) {
        throw ConfigError("config: one cell training config per scale group is required");
    }
    for (const auto& c : cell) {
        c.validate();
    }
    macro.validate();
    for (double e : eps) {
        if (!(e > 0.0 && e < 1.0)) {
            throw ConfigError("config: eps values must lie in (0, 1)");
        }
    }
    if (macro_a0 != "tnn" && macro_a0 != "analytic") {
        throw ConfigError("config: macro_a0 must be 'tnn' or 'analytic'");
    }
    if (macro_a0 == "analytic" && d != 1) {
        throw ConfigError("config: macro_a0 'analytic' needs d = 1");
    }
    if (plot_points < 2 || checkpoint_every < 0) {
        throw ConfigError("config: plot_points must be >= 2 and checkpoint_every >= 0");
    }
    if ((fem.n_1d != 0 && fem.n_1d < 2) || (fem.n_2d != 0 && (fem.n_2d < 2 || fem.n_2d > kMaxQ1Mesh)) ||
        fem.n_u0 < 2 || fem.cell_n_el < 2 || fem.slice_points < 1) {
        throw ConfigError("fem: mesh sizes out of range");
    }
    if (out.empty()) {
        throw ConfigError("config: empty output directory");
    }
}

Problem PipelineConfig::resolve_problem() const
{
    if (problem != "custom") {
        return builtin(problem);
    }
    if (!custom) {
        throw ConfigError("config: problem 'custom' needs a 'custom' object");
    }
    const json& j = *custom;
    check_keys(j, {"name", "d", "K", "coefficient", "gamma", "source", "domain"}, "custom");
    Problem p;
    try {
        p.name = j.value("name", std::string("custom"));
        p.d = j.value("d", 1);
        p.K = j.value("K", 1);
        if (p.K < 1 || p.K > 2 || p.d < 1 || p.d > 2) {
            throw ConfigError("custom: K and d must each be 1 or 2");
        }
        p.coeff = TensorCoefficient::isotropic(p.d, p.K, expr_from_json(j.at("coefficient"), p.d),
                                               j.value("gamma", 0.25));
        p.source = expr_from_json(j.at("source"), p.d);
        for (const auto& iv : j.at("domain")) {
            p.domain.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("custom: ") + e.what());
    }
    if (p.domain.size() != static_cast<std::size_t>(p.d)) {
        throw ConfigError("custom: one domain interval per axis is required");
    }
    for (const auto& iv : p.domain) {
        if (!(iv.hi > iv.lo)) {
            throw ConfigError("custom: empty domain interval");
        }
    }
    const int total = (p.K + 1) * p.d;
    for (int dim : p.coeff.dims()) {
        if (dim >= total) {
            throw ConfigError("custom: coefficient uses a dimension beyond (K + 1) d");
        }
    }
    for (int dim : p.source.dims()) {
        if (dim >= p.d) {
            throw ConfigError("custom: source may only depend on slow dimensions");
        }
    }
    return p;
}

TensorGrid PipelineConfig::build_grid(const Problem& p) const
{
    std::vector<CompositeGaussRule> rules;
    for (int dim = 0; dim < (K + 1) * d; ++dim) {
        const int g = dim / d;
        GridAxisSpec s = grid[static_cast<std::size_t>(g)];
        if (auto it = grid_overrides.find(dim_name(dim, d)); it != grid_overrides.end()) {
            s = it->second;
        }
        const Interval1D iv = g == 0 ? p.domain[static_cast<std::size_t>(dim % d)] : Interval1D{0.0, 1.0};
        rules.push_back(build_gauss_rule(iv, s.n_sub, s.n_pts));
    }
    return TensorGrid(d, K, std::move(rules));
}

std::vector<TrainConfig> PipelineConfig::stage_configs() const
{
    std::vector<TrainConfig> v = cell;
    for (auto& c : v) {
        c.seed = seed;
    }
    return v;
}

TrainConfig PipelineConfig::macro_config() const
{
    TrainConfig c = macro;
    c.seed = seed;
    return c;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, Stage until, std::ostream* log)
{
    using Clock = std::chrono::steady_clock;
    const auto t_start = Clock::now();
    cfg.validate();
    const Problem prob = cfg.resolve_problem();
    const TensorGrid grid = in_stage("grid", [&] { return cfg.build_grid(prob); });
    const fs::path out(cfg.out);
    const fs::path ckdir = out / "checkpoints";
    fs::create_directories(ckdir);
    write_file(out / "config.json", config_to_json(cfg).dump(2) + "\n");
    auto say = [&](const std::string& s) {
        if (log) {
            *log << s << std::endl;
        }
    };

    PipelineResult res;
    json& sm = res.summary;
    sm["problem"] = prob.name;
    sm["d"] = prob.d;
    sm["K"] = prob.K;
    sm["seed"] = cfg.seed;
    sm["deterministic"] = cfg.deterministic;
    sm["stage_reached"] = to_string(until);
    json gj = json::array();
    for (int dim = 0; dim < grid.total_dims(); ++dim) {
        const auto& r = grid.rule(dim);
        gj.push_back({{"dim", dim_name(dim, prob.d)}, {"n_sub", r.n_sub()}, {"n_pts", r.n_pts()},
                      {"lo", r.interval().lo}, {"hi", r.interval().hi}});
    }
    sm["grid"] = gj;
    json wall = json::object();

    in_stage("coefficient", [&] { return check_ellipticity(prob.coeff, grid, true); });
    const std::string problem_key = cfg.custom ? cfg.custom->dump() : prob.name;
    std::string chain = fnv1a(problem_key + "|" + gj.dump());

    // Cell stages, finest first.
    Homogenization hom;
    {
        const auto t0 = Clock::now();
        SampledCoefficient current = sample_coefficient(prob.coeff, grid);
        const auto stage_cfg = cfg.stage_configs();
        json stages = json::array();
        for (int s = 0; s < prob.K; ++s) {
            const int group = prob.K - s;
            const TrainConfig& tc = stage_cfg[static_cast<std::size_t>(s)];
            chain = fnv1a(chain + "|cell" + std::to_string(group) + "|" + train_config_to_json(tc).dump() + "|" +
                          std::to_string(cfg.seed));
            const std::string stage_name = "cell group " + std::to_string(group);
            const CellProblem cell = in_stage(stage_name, [&] { return make_cell_problem(current, grid, group); });
            auto ck_path = [&](int j) {
                return ckdir / ("cell_g" + std::to_string(group) + "_dir" + std::to_string(j + 1) + ".json");
            };

            CellSolution sol;
            std::vector<StructuralReport> worst(static_cast<std::size_t>(prob.d));
            bool reused = cfg.reuse_checkpoints;
            std::vector<json> loaded;
            for (int j = 0; j < prob.d && reused; ++j) {
                auto ck = load_checkpoint(ck_path(j), chain);
                if (!ck) {
                    reused = false;
                } else {
                    loaded.push_back(std::move(*ck));
                }
            }
            if (reused) {
                say(stage_name + ": reusing checkpoints");
                sol.problem = cell;
                for (int j = 0; j < prob.d; ++j) {
                    const json& ck = loaded[static_cast<std::size_t>(j)];
                    DirectionSolution ds;
                    ds.j = j;
                    ds.model = model_from_json(ck.at("model"));
                    ds.chi = wrap_corrector(cell, ds.model);
                    const ResidualAssembler assembler(cell_residual(cell, j), ds.model.p, tc.route);
                    ds.loss = std::sqrt(std::max(assembler.squared_value(ds.chi), 0.0));
                    ds.route = assembler.route();
                    ds.structure = cell_structure(cell, ds.model);
                    worst[static_cast<std::size_t>(j)] = structure_from_json(ck.at("structure_max"));
                    sol.directions.push_back(std::move(ds));
                }
            } else {
                say(stage_name + ": training " + std::to_string(prob.d) + " direction(s)");
                TrainOptions opts;
                opts.deterministic = cfg.deterministic;
                opts.hook = [&](int j, int step, const TnnModel& m) {
                    merge_max(worst[static_cast<std::size_t>(j)], cell_structure(cell, m));
                    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
                        write_file(ckdir / ("cell_g" + std::to_string(group) + "_dir" + std::to_string(j + 1) +
                                            "_step" + std::to_string(step) + ".json"),
                                   json{{"kind", "cell"}, {"group", group}, {"direction", j + 1}, {"step", step},
                                        {"model", model_to_json(m)}}
                                       .dump());
                    }
                };
                sol = in_stage(stage_name, [&] { return train_cell(cell, tc, opts); });
                for (const auto& ds : sol.directions) {
                    merge_max(worst[static_cast<std::size_t>(ds.j)], ds.structure);
                    write_loss_csv((out / ("loss_cell_g" + std::to_string(group) + "_dir" +
                                           std::to_string(ds.j + 1) + ".csv"))
                                       .string(),
                                   ds.history);
                    write_file(ck_path(ds.j),
                               json{{"fingerprint", chain},
                                    {"kind", "cell"},
                                    {"group", group},
                                    {"direction", ds.j + 1},
                                    {"loss", ds.loss},
                                    {"structure_max", structure_json(worst[static_cast<std::size_t>(ds.j)])},
                                    {"model", model_to_json(ds.model)}}
                                   .dump());
                }
            }
            HomogenizedCoefficient hc = in_stage(
                stage_name, [&] { return compute_homogenized_coefficient(cell, sol, prob.coeff.gamma); });

            json st;
            st["group"] = group;
            st["reused_checkpoints"] = reused;
            st["cell_dims"] = json::array();
            for (int dim : cell.dims) {
                st["cell_dims"].push_back(dim_name(dim, prob.d));
            }
            json dirs = json::array();
            for (const auto& ds : sol.directions) {
                dirs.push_back({{"direction", ds.j + 1},
                                {"loss", ds.loss},
                                {"route", to_string(ds.route)},
                                {"steps", tc.steps_adam + tc.lbfgs_steps()},
                                {"structure_final", structure_json(ds.structure)},
                                {"structure_max_over_checkpoints",
                                 structure_json(worst[static_cast<std::size_t>(ds.j)])}});
                say(stage_name + " dir " + std::to_string(ds.j + 1) + ": loss " + sci(ds.loss));
            }
            st["directions"] = dirs;
            st["asymmetry"] = hc.asymmetry;
            st["ellipticity"] = {{"checked", hc.ellipticity.checked},
                                 {"violations", hc.ellipticity.violations},
                                 {"min_eig", hc.ellipticity.min_eig},
                                 {"max_eig", hc.ellipticity.max_eig}};
            if (hc.ellipticity.violations > 0) {
                res.warnings.push_back(stage_name + ": homogenized coefficient outside [gamma, 1/gamma] at " +
                                       std::to_string(hc.ellipticity.violations) + " of " +
                                       std::to_string(hc.ellipticity.checked) + " nodes (eigenvalues " +
                                       sci(hc.ellipticity.min_eig) + " .. " + sci(hc.ellipticity.max_eig) + ")");
            }
            st["output_dims"] = json::array();
            for (int dim : hc.dims) {
                st["output_dims"].push_back(dim_name(dim, prob.d));
            }
            const std::string table = (s == prob.K - 1 ? "a0" : "a1") + std::string(".csv");
            if (prob.d == 1) {
                const Tabulated oracle = harmonic_homogenized_1d(prob.coeff, grid, hc.dims);
                const double rel = relative_l2_error(hc.a.entry(0, 0), oracle);
                st["rel_l2_error_vs_harmonic_mean"] = rel;
                write_coefficient_table(out / table, hc, grid, prob.d, &oracle.values);
                say(stage_name + ": relative L2 error of the homogenized coefficient " + sci(rel));
            } else {
                st["rel_l2_error_vs_harmonic_mean"] = nullptr;
                write_coefficient_table(out / table, hc, grid, prob.d, nullptr);
            }
            if (hc.dims.empty()) {
                json m = json::array();
                for (int i = 0; i < prob.d; ++i) {
                    json row = json::array();
                    for (int k = 0; k < prob.d; ++k) {
                        row.push_back(scalar_value(hc.a.entry(i, k)));
                    }
                    m.push_back(row);
                }
                st["constant_value"] = m;
            }
            st["table"] = table;
            stages.push_back(st);

            current = hc.a;
            hom.cells.push_back(std::move(sol));
            hom.stages.push_back(std::move(hc));
        }
        hom.a0 = hom.stages.back();
        sm["cell_stages"] = stages;
        sm["a0_rel_error"] = stages.back()["rel_l2_error_vs_harmonic_mean"];
        if (prob.K == 2) {
            sm["a1_rel_error"] = stages.front()["rel_l2_error_vs_harmonic_mean"];
        }
        wall["cell"] = secs_since(t0);
    }

    // Corrector slices against periodic FEM (d = 1, K = 1).
    if (prob.d == 1 && prob.K == 1) {
        const auto t0 = Clock::now();
        const CellSolution& cs = hom.cells.front();
        const PointTnn chi = cs.evaluator(0);
        const Interval1D dom = prob.domain[0];
        std::ostringstream os;
        os << "x,abs_l2,rel_l2\n";
        double worst = 0.0;
        for (int i = 0; i < cfg.fem.slice_points; ++i) {
            const double x = dom.lo + (i + 0.5) * dom.length() / cfg.fem.slice_points;
            const auto ref = in_stage("cell slices", [&] {
                return solve_cell_periodic_1d(
                    [&](double y) {
                        const std::vector<double> pt{x, y};
                        return prob.coeff.entry(0, 0).value(pt);
                    },
                    cfg.fem.cell_n_el);
            });
            const Candidate1D cand = [&](double y) -> std::array<double, 2> {
                const auto e = chi.eval(gather(chi.dims(), {x, y}));
                double dy = 0.0;
                for (std::size_t k = 0; k < chi.dims().size(); ++k) {
                    if (chi.dims()[k] == 1) {
                        dy = e.grad[static_cast<Eigen::Index>(k)];
                    }
                }
                return {e.value, dy};
            };
            const ErrorReport er = error_norms(cand, ref.chi);
            worst = std::max(worst, er.l2_rel);
            os << num(x) << ',' << num(er.l2_abs) << ',' << num(er.l2_rel) << '\n';
        }
        write_file(out / "cell_slices.csv", os.str());
        sm["cell_slices"] = {{"points", cfg.fem.slice_points}, {"n_el", cfg.fem.cell_n_el}, {"max_rel_l2", worst}};
        say("corrector slices: max relative L2 error " + sci(worst));
        wall["cell_slices"] = secs_since(t0);
    }

    auto finish = [&]() {
        sm["wall_seconds"] = wall;
        sm["wall_seconds"]["total"] = secs_since(t_start);
        sm["warnings"] = res.warnings;
        json errs = json::array();
        for (const auto& e : res.errors) {
            errs.push_back({{"eps", e.eps},
                            {"mesh", e.mesh},
                            {"abs_l2", e.abs_l2},
                            {"rel_l2", e.rel_l2},
                            {"h1_abs", e.h1_abs},
                            {"h1_rel", e.h1_rel},
                            {"h1_leading_abs", e.h1_leading_abs < 0 ? json(nullptr) : json(e.h1_leading_abs)},
                            {"h1_leading_rel", e.h1_leading_rel < 0 ? json(nullptr) : json(e.h1_leading_rel)},
                            {"reference_cached", e.cached}});
        }
        sm["eps_sweep"] = errs;
        write_file(out / "summary.json", sm.dump(2) + "\n");
        write_file(out / "summary.txt", summary_text(sm));
        return res;
    };
    if (until == Stage::cell || until == Stage::homogenize) {
        return finish();
    }

    // Macro problem.
    const auto t_macro = Clock::now();
    const SampledCoefficient a0 = cfg.macro_a0 == "analytic"
                                      ? in_stage("macro", [&] { return harmonic_macro_coefficient(prob.coeff, grid); })
                                      : hom.a0.a;
    const MacroProblem mp = in_stage("macro", [&] { return make_macro_problem(a0, prob.source, prob.domain, grid); });
    const TrainConfig mc = cfg.macro_config();
    chain = fnv1a(chain + "|macro|" + cfg.macro_a0 + "|" + train_config_to_json(mc).dump());
    MacroSolution macro;
    StructuralReport worst_macro;
    bool macro_reused = false;
    if (cfg.reuse_checkpoints) {
        if (auto ck = load_checkpoint(ckdir / "macro.json", chain)) {
            macro_reused = true;
            say("macro: reusing checkpoint");
            macro.model = model_from_json(ck->at("model"));
            macro.u0 = wrap_macro(mp, macro.model);
            const ResidualAssembler assembler(macro_residual(mp), macro.model.p, mc.route);
            macro.loss = std::sqrt(std::max(assembler.squared_value(macro.u0), 0.0));
            macro.route = assembler.route();
            macro.structure = macro_structure(mp, macro.model);
            worst_macro = structure_from_json(ck->at("structure_max"));
        }
    }
    if (!macro_reused) {
        say("macro: training");
        TrainOptions opts;
        opts.deterministic = cfg.deterministic;
        opts.hook = [&](int, int step, const TnnModel& m) {
            merge_max(worst_macro, macro_structure(mp, m));
            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
                write_file(ckdir / ("macro_step" + std::to_string(step) + ".json"),
                           json{{"kind", "macro"}, {"step", step}, {"model", model_to_json(m)}}.dump());
            }
        };
        macro = in_stage("macro", [&] { return train_macro(mp, mc, opts); });
        merge_max(worst_macro, macro.structure);
        write_loss_csv((out / "loss_macro.csv").string(), macro.history);
        write_file(ckdir / "macro.json", json{{"fingerprint", chain},
                                              {"kind", "macro"},
                                              {"loss", macro.loss},
                                              {"structure_max", structure_json(worst_macro)},
                                              {"model", model_to_json(macro.model)}}
                                             .dump());
    }
    say("macro: loss " + sci(macro.loss));
    json mj{{"loss", macro.loss},
            {"route", to_string(macro.route)},
            {"a0_source", cfg.macro_a0},
            {"reused_checkpoint", macro_reused},
            {"steps", mc.steps_adam + mc.lbfgs_steps()},
            {"structure_final", structure_json(macro.structure)},
            {"structure_max_over_checkpoints", structure_json(worst_macro)}};
    const PointTnn u0 = macro.evaluator(mp);
    if (prob.d == 1) {
        const Mesh1D mesh = Mesh1D::uniform(prob.domain[0], cfg.fem.n_u0);
        const P1Function ref = in_stage("macro reference", [&] {
            return solve_dirichlet_1d([&](double x) { return harmonic_at(prob.coeff, x); },
                                      [&](double x) {
                                          const std::vector<double> pt{x};
                                          return prob.source.value(pt);
                                      },
                                      mesh);
        });
        const Candidate1D cand = [&](double x) -> std::array<double, 2> {
            const std::vector<double> pt{x};
            const auto e = u0.eval(pt);
            return {e.value, e.grad[0]};
        };
        const ErrorReport er = error_norms(cand, ref);
        mj["u0_error"] = {{"abs_l2", er.l2_abs}, {"rel_l2", er.l2_rel}, {"h1_abs", er.h1_abs},
                          {"h1_rel", er.h1_rel}, {"reference_mesh", cfg.fem.n_u0}};
        say("macro: u0 relative L2 error vs FEM with the harmonic coefficient " + sci(er.l2_rel));
    } else {
        mj["u0_error"] = nullptr;
    }
    sm["macro"] = mj;
    wall["macro"] = secs_since(t_macro);
    if (until == Stage::macro) {
        return finish();
    }

    // Reconstruction.
    const auto t_rec = Clock::now();
    std::vector<MultiscaleSolution> sols;
    for (double eps : cfg.eps) {
        sols.push_back(in_stage("reconstruct", [&] { return reconstruct(mp, macro, hom, eps); }));
        const int n = cfg.plot_points;
        sols.back().write_csv((out / ("solution_eps" + eps_tag(eps) + ".csv")).string(), n);
    }
    wall["reconstruct"] = secs_since(t_rec);
    if (until == Stage::reconstruct) {
        return finish();
    }

    // FEM comparison.
    const auto t_fem = Clock::now();
    const fs::path cache = cfg.fem.cache_dir.empty() ? out / "fem_cache" : fs::path(cfg.fem.cache_dir);
    fs::create_directories(cache);
    for (std::size_t e = 0; e < cfg.eps.size(); ++e) {
        const double eps = cfg.eps[e];
        const MultiscaleSolution& ms = sols[e];
        EpsError row;
        row.eps = eps;
        auto f_src = [&](std::span<const double> x) { return prob.source.value(x); };
        if (prob.d == 1) {
            row.mesh = cfg.fem.n_1d > 0 ? cfg.fem.n_1d : mesh_1d_for(eps, prob.K);
            const std::string key = problem_key + "|1d|" + num(eps) + "|" + std::to_string(row.mesh);
            const fs::path file = cache / ("fem_" + fnv1a(key) + ".bin");
            const Mesh1D mesh = Mesh1D::uniform(prob.domain[0], row.mesh);
            P1Function ref{mesh, {}};
            if (auto hit = load_reference(file.string(), key);
                hit && hit->second.size() == static_cast<std::size_t>(row.mesh + 1)) {
                ref.u = std::move(hit->second);
                row.cached = true;
            } else {
                ref = in_stage("compare-fem", [&] {
                    return solve_dirichlet_1d(
                        [&](double x) {
                            const std::vector<double> pt{x};
                            return oscillating_entry(prob.coeff, eps, pt, 0, 0);
                        },
                        [&](double x) {
                            const std::vector<double> pt{x};
                            return f_src(pt);
                        },
                        mesh);
                });
                save_reference(file.string(), key, {static_cast<std::uint64_t>(row.mesh + 1)}, ref.u);
            }
            const Candidate1D full = [&](double x) -> std::array<double, 2> {
                const std::vector<double> pt{x};
                const auto p = ms.eval(pt);
                return {p.u_eps, p.grad[0]};
            };
            const Candidate1D leading = [&](double x) -> std::array<double, 2> {
                const std::vector<double> pt{x};
                const auto p = ms.eval(pt);
                return {p.u_eps, p.grad_leading[0]};
            };
            const ErrorReport er = error_norms(full, ref);
            const ErrorReport el = error_norms(leading, ref);
            row.abs_l2 = er.l2_abs;
            row.rel_l2 = er.l2_rel;
            row.h1_abs = er.h1_abs;
            row.h1_rel = er.h1_rel;
            row.h1_leading_abs = el.h1_abs;
            row.h1_leading_rel = el.h1_rel;
        } else {
            row.mesh = cfg.fem.n_2d > 0 ? cfg.fem.n_2d : mesh_2d_for(eps);
            const std::string key = problem_key + "|2d|" + num(eps) + "|" + std::to_string(row.mesh);
            const fs::path file = cache / ("fem_" + fnv1a(key) + ".bin");
            const std::size_t nn = static_cast<std::size_t>(row.mesh + 1);
            Q1Function ref{prob.domain[0], prob.domain[1], row.mesh, {}, {}};
            if (auto hit = load_reference(file.string(), key); hit && hit->second.size() == nn * nn) {
                ref.u = std::move(hit->second);
                row.cached = true;
            } else {
                ref = in_stage("compare-fem", [&] {
                    return solve_dirichlet_q1_2d(
                        [&](double x, double y) -> std::array<double, 3> {
                            const std::vector<double> pt{x, y};
                            return {oscillating_entry(prob.coeff, eps, pt, 0, 0),
                                    oscillating_entry(prob.coeff, eps, pt, 0, 1),
                                    oscillating_entry(prob.coeff, eps, pt, 1, 1)};
                        },
                        [&](double x, double y) {
                            const std::vector<double> pt{x, y};
                            return f_src(pt);
                        },
                        prob.domain[0], prob.domain[1], row.mesh);
                });
                save_reference(file.string(), key, {nn, nn}, ref.u);
            }
            const Candidate2D full = [&](double x, double y) -> std::array<double, 3> {
                const std::vector<double> pt{x, y};
                const auto p = ms.eval(pt);
                return {p.u_eps, p.grad[0], p.grad[1]};
            };
            const ErrorReport er = error_norms(full, ref);
            row.abs_l2 = er.l2_abs;
            row.rel_l2 = er.l2_rel;
            row.h1_abs = er.h1_abs;
            row.h1_rel = er.h1_rel;
        }
        say("eps " + eps_tag(eps) + ": FEM mesh " + std::to_string(row.mesh) + (row.cached ? " (cached)" : "") +
            ", L2 error " + sci(row.abs_l2) + " (relative " + sci(row.rel_l2) + ")");
        res.errors.push_back(row);
    }
    std::ostringstream l2;
    std::ostringstream h1;
    l2 << "eps,abs_l2,rel_l2\n";
    h1 << "eps,mesh,h1_abs,h1_rel,h1_leading_abs,h1_leading_rel\n";
    for (const auto& r : res.errors) {
        l2 << num(r.eps) << ',' << num(r.abs_l2) << ',' << num(r.rel_l2) << '\n';
        h1 << num(r.eps) << ',' << r.mesh << ',' << num(r.h1_abs) << ',' << num(r.h1_rel) << ','
           << (r.h1_leading_abs < 0 ? std::string() : num(r.h1_leading_abs)) << ','
           << (r.h1_leading_rel < 0 ? std::string() : num(r.h1_leading_rel)) << '\n';
    }
    write_file(out / "errors_eps.csv", l2.str());
    write_file(out / "errors_eps_h1.csv", h1.str());
    wall["compare_fem"] = secs_since(t_fem);
    return finish();
}

std::string summary_text(const json& s)
{
    std::ostringstream os;
    auto val = [](const json& j) { return j.is_number() ? sci(j.get<double>()) : std::string("-"); };
    os << "problem " << s.value("problem", std::string("?")) << "  d=" << s.value("d", 0) << "  K=" << s.value("K", 0)
       << "  seed=" << s.value("seed", 0) << "  stage=" << s.value("stage_reached", std::string("?")) << "\n\n";
    if (s.contains("cell_stages")) {
        os << "cell stages (structure columns: max over checkpoints)\n";
        os << "  group dir  loss        route      periodicity norm_dev    mean_zero\n";
        for (const auto& st : s.at("cell_stages")) {
            for (const auto& d : st.at("directions")) {
                const auto& w = d.at("structure_max_over_checkpoints");
                char buf[256];
                std::snprintf(buf, sizeof buf, "  %5d %3d  %-10s  %-9s  %-10s  %-10s  %-10s\n",
                              st.at("group").get<int>(), d.at("direction").get<int>(), val(d.at("loss")).c_str(),
                              d.at("route").get<std::string>().c_str(), val(w.at("periodicity")).c_str(),
                              val(w.at("norm_deviation")).c_str(), val(w.at("mean_zero")).c_str());
                os << buf;
            }
            os << "  group " << st.at("group").get<int>()
               << " homogenized coefficient: relative L2 error vs harmonic mean "
               << val(st.at("rel_l2_error_vs_harmonic_mean")) << ", asymmetry " << val(st.at("asymmetry"));
            if (st.contains("constant_value")) {
                os << ", value " << st.at("constant_value").dump();
            }
            os << "\n";
        }
        os << "\n";
    }
    if (s.contains("cell_slices")) {
        os << "corrector slices vs periodic FEM: max relative L2 " << val(s.at("cell_slices").at("max_rel_l2"))
           << " (" << s.at("cell_slices").at("points").get<int>() << " points, n_el "
           << s.at("cell_slices").at("n_el").get<int>() << ")\n\n";
    }
    if (s.contains("macro")) {
        const auto& m = s.at("macro");
        os << "macro: loss " << val(m.at("loss")) << ", route " << m.at("route").get<std::string>()
           << ", boundary max " << val(m.at("structure_max_over_checkpoints").at("boundary"));
        if (m.at("u0_error").is_object()) {
            os << ", u0 error abs " << val(m.at("u0_error").at("abs_l2")) << " rel "
               << val(m.at("u0_error").at("rel_l2"));
        }
        os << "\n\n";
    }
    if (s.contains("eps_sweep") && !s.at("eps_sweep").empty()) {
        os << "  eps         mesh    abs_l2      rel_l2      h1_abs      h1_rel\n";
        for (const auto& e : s.at("eps_sweep")) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "  %-10.6g  %-6d  %-10s  %-10s  %-10s  %-10s\n", e.at("eps").get<double>(),
                          e.at("mesh").get<int>(), val(e.at("abs_l2")).c_str(), val(e.at("rel_l2")).c_str(),
                          val(e.at("h1_abs")).c_str(), val(e.at("h1_rel")).c_str());
            os << buf;
        }
        os << "\n";
    }
    if (s.contains("warnings")) {
        for (const auto& w : s.at("warnings")) {
            os << "warning: " << w.get<std::string>() << "\n";
        }
    }
    if (s.contains("wall_seconds")) {
        os << "wall seconds:";
        for (const auto& [k, v] : s.at("wall_seconds").items()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, " %s=%.1f", k.c_str(), v.get<double>());
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace tenshom
