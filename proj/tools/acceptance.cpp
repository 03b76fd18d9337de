// Acceptance runner: one PASS/FAIL line per criterion, with the measured value
// next to its limit. Long runs write their artifacts under --out.

#include "../tests/support.hpp"
#include "tenshom/diagnostics.hpp"
#include "tenshom/error.hpp"
#include "tenshom/fem_ref.hpp"
#include "tenshom/pipeline.hpp"
#include "tenshom/separable.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

using namespace tenshom;
namespace fs = std::filesystem;
using nlohmann::json;

#ifndef TENSHOM_CONFIG_DIR
#define TENSHOM_CONFIG_DIR "configs"
#endif

namespace {

constexpr double kPi = std::numbers::pi;

struct Report {
    std::vector<std::string> lines;
    int passed = 0;
    int failed = 0;
    int skipped = 0;
    std::ofstream file;

    void emit(const std::string& s)
    {
        std::cout << s << std::endl;
        if (file) {
            file << s << std::endl;
        }
    }
    void check(const std::string& id, bool ok, const std::string& what)
    {
        (ok ? passed : failed)++;
        emit(std::string(ok ? "[PASS] " : "[FAIL] ") + id + "  " + what);
    }
    void skip(const std::string& id, const std::string& what)
    {
        ++skipped;
        emit("[SKIP] " + id + "  " + what);
    }
    void info(const std::string& what) { emit("[INFO] " + what); }
};

std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 2: separable algebra against brute force ------------------

std::vector<int> all_dims(const TensorGrid& g)
{
    std::vector<int> d(static_cast<std::size_t>(g.total_dims()));
    for (int i = 0; i < g.total_dims(); ++i) {
        d[static_cast<std::size_t>(i)] = i;
    }
    return d;
}

std::vector<int> random_subset(std::mt19937_64& rng, const std::vector<int>& dims, bool allow_all)
{
    for (;;) {
        std::vector<int> s;
        for (int d : dims) {
            if (rng() & 1u) {
                s.push_back(d);
            }
        }
        if (!s.empty() && (allow_all || s.size() < dims.size())) {
            return s;
        }
        if (dims.size() == 1) {
            return dims;
        }
    }
}

double separable_oracle_case(std::mt19937_64& rng, int trial)
{
    namespace tt = tenshom::testing;
    std::uniform_int_distribution<int> rank(1, 5);
    const int total = 1 + trial % 4;
    const TensorGrid g = total == 4 ? tt::random_grid(rng, 2, 1, 16) : tt::random_grid(rng, 1, total - 1, 16);
    const auto dims = all_dims(g);
    const Separable f = tt::random_separable(rng, g, dims, rank(rng));
    const Separable h = tt::random_separable(rng, g, dims, rank(rng));
    double worst = 0.0;

    // l2_inner, scaled by the Cauchy-Schwarz bound.
    const double ff = tt::dense_inner(f, f);
    const double hh = tt::dense_inner(h, h);
    worst = std::max(worst, std::abs(l2_inner(f, h) - tt::dense_inner(f, h)) / std::sqrt(ff * hh));

    // multiply with broadcasting.
    const Separable k = tt::random_separable(rng, g, random_subset(rng, dims, true), rank(rng));
    const Separable fk = multiply(f, k);
    if (fk.dims != dims) {
        return 1.0;
    }
    const std::vector<double> lib = dense_eval_oracle(fk);
    std::vector<double> ref;
    double scale = 0.0;
    tt::for_each_node(g, dims, [&](const auto& idx, double) {
        ref.push_back(tt::eval_at(f, idx) * tt::eval_at(k, idx));
        scale = std::max(scale, std::abs(ref.back()));
    });
    for (std::size_t i = 0; i < ref.size(); ++i) {
        worst = std::max(worst, std::abs(lib[i] - ref[i]) / scale);
    }

    // partial_integrate over a random subset.
    const std::vector<int> sub = random_subset(rng, dims, true);
    std::vector<int> keep;
    for (int d : dims) {
        if (std::find(sub.begin(), sub.end(), d) == sub.end()) {
            keep.push_back(d);
        }
    }
    const Separable p = partial_integrate(f, sub);
    std::map<std::vector<Eigen::Index>, double> dense;
    tt::for_each_node(g, dims, [&](const auto& idx, double) {
        double w = 1.0;
        std::vector<Eigen::Index> key;
        for (int d : dims) {
            const auto n = static_cast<std::size_t>(idx[static_cast<std::size_t>(d)]);
            if (std::find(sub.begin(), sub.end(), d) != sub.end()) {
                w *= g.rule(d).weights()[n];
            } else {
                key.push_back(idx[static_cast<std::size_t>(d)]);
            }
        }
        dense[key] += w * tt::eval_at(f, idx);
    });
    double pscale = 0.0;
    for (const auto& [key, v] : dense) {
        pscale = std::max(pscale, std::abs(v));
    }
    for (const auto& [key, v] : dense) {
        double lv = 0.0;
        if (keep.empty()) {
            lv = scalar_value(p);
        } else {
            std::vector<Eigen::Index> idx(static_cast<std::size_t>(g.total_dims()), 0);
            for (std::size_t q = 0; q < keep.size(); ++q) {
                idx[static_cast<std::size_t>(keep[q])] = key[q];
            }
            lv = tt::eval_at(p, idx);
        }
        worst = std::max(worst, std::abs(lv - v) / pscale);
    }
    return worst;
}

// ---- criterion 10: FEM self-checks -----------------------------------------

double l2_vs_sin_1d(int n)
{
    const auto sol = solve_dirichlet_1d([](double) { return 1.0; }, [](double x) { return std::sin(x); },
                                        Mesh1D::uniform({0.0, kPi}, n));
    return error_norms([](double x) { return std::array<double, 2>{std::sin(x), std::cos(x)}; }, sol).l2_abs;
}

double l2_vs_sinsin_2d(int n)
{
    const auto sol = solve_dirichlet_q1_2d([](double, double) { return 1.0; },
                                           [](double x, double y) { return 2.0 * std::sin(x) * std::sin(y); },
                                           {0.0, kPi}, {0.0, kPi}, n);
    return error_norms(
               [](double x, double y) {
                   return std::array<double, 3>{std::sin(x) * std::sin(y), std::cos(x) * std::sin(y),
                                                std::sin(x) * std::cos(y)};
               },
               sol)
        .l2_abs;
}

// ---- pipeline runs -------------------------------------------------------

struct Run {
    PipelineResult result;
    bool ok = false;
    std::string error;
};

Run run_config(const fs::path& file, const fs::path& out, bool reuse, Stage until = Stage::compare,
               const std::function<void(json&)>& edit = {})
{
    Run r;
    try {
        std::ifstream is(file);
        if (!is) {
            throw ConfigError("cannot open " + file.string());
        }
        json j = json::parse(is);
        j["out"] = out.string();
        j["reuse_checkpoints"] = reuse;
        if (edit) {
            edit(j);
        }
        std::cerr << "running " << file.filename().string() << " -> " << out.string() << std::endl;
        r.result = run_pipeline(config_from_json(j), until, &std::cerr);
        r.ok = true;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

double num_or(const json& j, double fallback = std::nan(""))
{
    return j.is_number() ? j.get<double>() : fallback;
}

/// Worst structural measures over all checkpoints of a run.
void merge_structure(const json& summary, std::map<std::string, double>& worst)
{
    auto upd = [&](const std::string& k, const json& s) {
        worst[k] = std::max(worst[k], num_or(s.at(k), 0.0));
    };
    if (summary.contains("cell_stages")) {
        for (const auto& st : summary.at("cell_stages")) {
            for (const auto& d : st.at("directions")) {
                const auto& s = d.at("structure_max_over_checkpoints");
                upd("periodicity", s);
                upd("norm_deviation", s);
                upd("mean_zero", s);
            }
        }
    }
    if (summary.contains("macro")) {
        const auto& s = summary.at("macro").at("structure_max_over_checkpoints");
        upd("norm_deviation", s);
        upd("boundary", s);
    }
}

const EpsError* find_eps(const PipelineResult& r, double eps)
{
    for (const auto& e : r.errors) {
        if (std::abs(e.eps - eps) < 1e-12) {
            return &e;
        }
    }
    return nullptr;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria for the homogenization pipeline"};
    std::string out = "acceptance_out";
    std::string config_dir = TENSHOM_CONFIG_DIR;
    bool skip_full = false;
    bool reuse = false;
    app.add_option("--out", out, "directory for run artifacts");
    app.add_option("--configs", config_dir, "directory with the shipped configs");
    app.add_flag("--skip-full", skip_full, "skip the full-budget ex_1D run (about 10 minutes)");
    app.add_flag("--reuse", reuse, "reuse matching checkpoints from a previous acceptance run");
    CLI11_PARSE(app, argc, argv);

    fs::create_directories(out);
    Report rep;
    rep.file.open(fs::path(out) / "acceptance_report.txt");
    const fs::path cdir(config_dir);
    std::map<std::string, double> structure;
    const auto t_all = std::chrono::steady_clock::now();

    // 1. Quadrature exactness.
    {
        const auto t0 = std::chrono::steady_clock::now();
        const QuadcheckReport q = run_quadcheck();
        const double s = seconds_since(t0);
        rep.check("C1 quadrature", q.monomial_rel <= 1e-14 && q.weight_sum_rel <= 1e-13 && s < 1.0,
                  "x^k (k<=31), 16 points: " + sci(q.monomial_rel) + " <= 1e-14; weight sums " +
                      sci(q.weight_sum_rel) + " <= 1e-13; " + sci(s) + " s < 1 s");
    }

    // 2. Separable contractions against brute-force quadrature.
    {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(2024);
        double worst = 0.0;
        for (int t = 0; t < 200; ++t) {
            worst = std::max(worst, separable_oracle_case(rng, t));
        }
        const double s = seconds_since(t0);
        rep.check("C2 separable oracle", worst <= 1e-12 && s < 30.0,
                  "200 cases (d<=4, R<=5, N<=16), l2_inner / multiply / partial_integrate: max relative deviation " +
                      sci(worst) + " <= 1e-12; " + sci(s) + " s < 30 s");
    }

    // 3. Gradients.
    {
        const GradcheckReport g = run_gradcheck(7, 50);
        std::map<std::string, int> routes;
        for (const auto& c : g.cases) {
            routes[c.kind.substr(c.kind.rfind('/') + 2)]++;
        }
        const bool both = routes.count("separable") && routes.count("dense");
        rep.check("C3 gradients", g.max_deviation <= 1e-5 && both && g.wall_ms < 120000.0,
                  "50 models, separable " + std::to_string(routes["separable"]) + " / dense " +
                      std::to_string(routes["dense"]) + " cases: max |g - fd| / max(|fd|, 1e-3) = " +
                      sci(g.max_deviation) + " <= 1e-5; " + sci(g.wall_ms / 1000.0) + " s < 120 s");
    }

    // 10. FEM self-checks (cheap, run before the long trainings).
    {
        const double o1 = std::log2(l2_vs_sin_1d(256) / l2_vs_sin_1d(512));
        const double o2 = std::log2(l2_vs_sinsin_2d(128) / l2_vs_sinsin_2d(256));
        const auto a = [](double y) { return 2.0 + 0.5 * std::sin(2.0 * kPi * y); };
        const double exact = std::sqrt(3.75);
        auto discrete_harmonic = [&](int n) {
            const double h = 1.0 / n;
            const double g0 = 0.5 - 0.5 / std::numbers::sqrt3;
            double inv = 0.0;
            for (int e = 0; e < n; ++e) {
                inv += h / (0.5 * (a((e + g0) * h) + a((e + 1 - g0) * h)));
            }
            return 1.0 / inv;
        };
        const auto c4096 = solve_cell_periodic_1d(a, 4096);
        const auto c8192 = solve_cell_periodic_1d(a, 8192);
        const double ident = std::abs(c4096.homogenized - discrete_harmonic(4096));
        const double gap4096 = std::abs(c4096.homogenized - exact);
        const double gap8192 = std::abs(c8192.homogenized - exact);
        rep.check("C10 FEM", std::abs(o1 - 2.0) <= 0.2 && std::abs(o2 - 2.0) <= 0.2 && ident <= 1e-8 && gap8192 <= 1e-8,
                  "L2 order 1D " + sci(o1) + ", 2D " + sci(o2) + " (2 +- 0.2); cell identity vs same-quadrature "
                  "harmonic mean " + sci(ident) + ", vs 1/int(1/a): n_el=8192 " + sci(gap8192) + " <= 1e-8 (n_el=4096: " +
                      sci(gap4096) + ")");
    }

    // 5 (desk), 6, 7 (trend): ex_1D at the desk budget.
    const Run desk = run_config(cdir / "ex1d_desk.json", fs::path(out) / "ex1d_desk", reuse);
    if (!desk.ok) {
        rep.check("C5 ex_1D A* desk", false, "run failed: " + desk.error);
        rep.check("C6 corrector slices", false, "run failed");
        rep.check("C7 eps trend", false, "run failed");
    } else {
        const json& s = desk.result.summary;
        merge_structure(s, structure);
        const double a0 = num_or(s.at("a0_rel_error"));
        const double wall = s.at("wall_seconds").at("total").get<double>();
        rep.check("C5 ex_1D A* desk", a0 <= 1e-3 && wall <= 900.0,
                  "p=10, [20,20], Adam 5000, 40x16: relative L2 vs sqrt((sin x+2)^2-0.25) " + sci(a0) +
                      " <= 1e-3; pipeline wall " + sci(wall) + " s <= 900 s");
        const double sl = num_or(s.at("cell_slices").at("max_rel_l2"));
        rep.check("C6 corrector slices", sl <= 1e-2,
                  "20 x-points vs periodic FEM (n_el=4096), desk model: max relative L2 " + sci(sl) + " <= 1e-2");
        const EpsError* e5 = find_eps(desk.result, 0.2);
        const EpsError* e10 = find_eps(desk.result, 0.1);
        const EpsError* e20 = find_eps(desk.result, 0.05);
        if (e5 && e10 && e20) {
            const bool mono = e5->abs_l2 > e10->abs_l2 && e10->abs_l2 > e20->abs_l2;
            const double ratio = e5->abs_l2 / e20->abs_l2;
            rep.check("C7 eps trend", mono && ratio >= 2.0 && ratio <= 10.0,
                      "desk L2 errors " + sci(e5->abs_l2) + ", " + sci(e10->abs_l2) + ", " + sci(e20->abs_l2) +
                          (mono ? " decreasing" : " NOT decreasing") + "; err(1/5)/err(1/20) = " + sci(ratio) +
                          " in [2, 10]");
        } else {
            rep.check("C7 eps trend", false, "desk config lacks eps 1/5, 1/10, 1/20");
        }
        const json& u0 = s.at("macro").at("u0_error");
        if (u0.is_object()) {
            rep.info("ex_1D desk u0 vs FEM with the analytic coefficient: abs " + sci(num_or(u0.at("abs_l2"))) +
                     ", rel " + sci(num_or(u0.at("rel_l2"))) + " (reported 3.3264e-05 / 6.2106e-05)");
        }
    }

    // The library default frequency list 1..20, for reference.
    {
        const Run def = run_config(cdir / "ex1d_desk.json", fs::path(out) / "ex1d_desk_default_freq", reuse,
                                   Stage::homogenize, [](json& j) {
                                       j["train"]["cell"].erase("frequencies");
                                       j["fem"]["slice_points"] = 1;
                                   });
        if (def.ok) {
            merge_structure(def.result.summary, structure);
            rep.info("ex_1D desk with the default periodic frequencies k=1..20: A* relative L2 " +
                     sci(num_or(def.result.summary.at("a0_rel_error"))) + " (the shipped configs use k=1)");
        } else {
            rep.info("ex_1D desk with default frequencies failed: " + def.error);
        }
    }

    // 5 (full) and 7 (reported magnitudes) at the full budget.
    if (skip_full) {
        rep.skip("C5 ex_1D A* full budget", "--skip-full");
        rep.skip("C7 reported magnitudes", "--skip-full");
    } else {
        const Run full = run_config(cdir / "ex1d_full.json", fs::path(out) / "ex1d_full", reuse);
        if (!full.ok) {
            rep.check("C5 ex_1D A* full budget", false, "run failed: " + full.error);
            rep.check("C7 reported magnitudes", false, "run failed");
        } else {
            const json& s = full.result.summary;
            merge_structure(s, structure);
            const double a0 = num_or(s.at("a0_rel_error"));
            rep.check("C5 ex_1D A* full budget", a0 <= 1e-4,
                      "30000 Adam + 20000 LBFGS: relative L2 " + sci(a0) + " <= 1e-4 (reported 3.0678e-06)");
            const std::vector<std::pair<double, double>> table{{0.2, 4.8789e-3}, {0.1, 3.3453e-3}, {0.05, 8.7515e-4}};
            bool ok = true;
            std::string detail;
            for (const auto& [eps, ref] : table) {
                const EpsError* e = find_eps(full.result, eps);
                if (!e) {
                    ok = false;
                    detail += " eps " + sci(eps) + " missing;";
                    continue;
                }
                const double f = e->abs_l2 / ref;
                ok = ok && f <= 3.0 && f >= 1.0 / 3.0;
                detail += " eps=" + sci(eps) + ": " + sci(e->abs_l2) + " vs " + sci(ref) + " (x" + sci(f) + ");";
            }
            rep.check("C7 reported magnitudes", ok, "full budget, within 3x of the table:" + detail);
            std::string all;
            for (const auto& e : full.result.errors) {
                all += " " + sci(e.eps) + ":" + sci(e.abs_l2) + "/" + sci(e.rel_l2);
            }
            rep.info("ex_1D full budget eps sweep (eps:abs/rel)" + all);
            rep.info("ex_1D full budget corrector slices: max relative L2 " +
                     sci(num_or(s.at("cell_slices").at("max_rel_l2"))) + " (reported 4.7948e-04)");
            const json& u0 = s.at("macro").at("u0_error");
            if (u0.is_object()) {
                rep.info("ex_1D full budget u0: abs " + sci(num_or(u0.at("abs_l2"))) + ", rel " +
                         sci(num_or(u0.at("rel_l2"))) + " (reported 3.3264e-05 / 6.2106e-05)");
            }
        }
    }

    // 8. ex_2D_1.
    {
        const Run r = run_config(cdir / "ex2d1_desk.json", fs::path(out) / "ex2d1_desk", reuse);
        if (!r.ok) {
            rep.check("C8 ex_2D_1", false, "run failed: " + r.error);
        } else {
            merge_structure(r.result.summary, structure);
            const EpsError* e5 = find_eps(r.result, 0.2);
            const EpsError* e10 = find_eps(r.result, 0.1);
            const bool meshes = e5 && e10 && e5->mesh == 256 && e10->mesh == 320;
            const bool ok = meshes && e5->rel_l2 <= 2e-2 && e10->rel_l2 <= 2e-2;
            rep.check("C8 ex_2D_1", ok,
                      e5 && e10 ? "relative L2 eps=1/5: " + sci(e5->rel_l2) + ", eps=1/10: " + sci(e10->rel_l2) +
                                      " <= 2e-2 (Q1 meshes " + std::to_string(e5->mesh) + ", " +
                                      std::to_string(e10->mesh) + "; reported 7.89e-03 / 3.07e-03)"
                                : "desk config lacks eps 1/5 and 1/10");
            const auto& st = r.result.summary.at("cell_stages")[0];
            if (st.contains("constant_value")) {
                rep.info("ex_2D_1 homogenized matrix " + st.at("constant_value").dump() + ", asymmetry " +
                         sci(num_or(st.at("asymmetry"))));
            }
        }
    }

    // 9. Three scales.
    {
        const Run r = run_config(cdir / "ex1d_3scale_desk.json", fs::path(out) / "ex1d_3scale_desk", reuse);
        if (!r.ok) {
            rep.check("C9 three-scale", false, "run failed: " + r.error);
        } else {
            const json& s = r.result.summary;
            merge_structure(s, structure);
            const double a1 = num_or(s.at("a1_rel_error"));
            const double a0 = num_or(s.at("a0_rel_error"));
            const EpsError* e5 = find_eps(r.result, 0.2);
            const bool ok = a1 <= 2e-3 && a0 <= 2e-3 && e5 && e5->rel_l2 <= 3e-2;
            rep.check("C9 three-scale", ok,
                      "A1 relative L2 " + sci(a1) + ", A0 " + sci(a0) + " <= 2e-3; reconstruction eps=1/5 " +
                          (e5 ? sci(e5->rel_l2) : std::string("missing")) + " <= 3e-2 (reported 1.49e-02)");
        }
    }

    // 4. Structural constraints over every checkpoint of every run above.
    rep.check("C4 structure",
              structure["periodicity"] <= 1e-13 && structure["norm_deviation"] <= 1e-12 &&
                  structure["mean_zero"] <= 1e-12 && structure["boundary"] <= 1e-14,
              "all checkpoints of all runs: periodicity " + sci(structure["periodicity"]) + " <= 1e-13, |norm-1| " +
                  sci(structure["norm_deviation"]) + " <= 1e-12, mean-zero/|psi| " + sci(structure["mean_zero"]) +
                  " <= 1e-12, boundary " + sci(structure["boundary"]) + " <= 1e-14");

    rep.emit(std::to_string(rep.passed) + " passed, " + std::to_string(rep.failed) + " failed, " +
             std::to_string(rep.skipped) + " skipped (" + sci(seconds_since(t_all)) + " s)");
    return rep.failed == 0 ? 0 : 1;
}
