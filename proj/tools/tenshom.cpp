// tenshom: command-line driver for the homogenization pipeline and its self-checks.

#include "tenshom/diagnostics.hpp"
#include "tenshom/error.hpp"
#include "tenshom/pipeline.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace tenshom;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool deterministic = false;
    std::string out;
    bool quiet = false;
};

PipelineConfig resolved_config(const Common& c)
{
    if (c.config.empty()) {
        throw ConfigError("--config PATH is required");
    }
    PipelineConfig cfg = load_config(c.config);
    if (c.seed_set) {
        cfg.seed = c.seed;
    }
    if (c.deterministic) {
        cfg.deterministic = true;
    }
    if (!c.out.empty()) {
        cfg.out = c.out;
    } else if (const char* env = std::getenv("TENSHOM_OUT"); env && *env) {
        cfg.out = env;
    }
    cfg.validate();
    return cfg;
}

int run_stage(const Common& c, Stage until)
{
    const PipelineConfig cfg = resolved_config(c);
    const PipelineResult r = run_pipeline(cfg, until, c.quiet ? nullptr : &std::cerr);
    std::cout << summary_text(r.summary);
    std::cout << "artifacts in " << cfg.out << "\n";
    return 0;
}

int gradcheck(std::uint64_t seed, int cases)
{
    const GradcheckReport r = run_gradcheck(seed, cases);
    for (const auto& c : r.cases) {
        std::printf("%-48s checked %3zu  max deviation %.3e\n", c.kind.c_str(), c.n_checked, c.max_deviation);
    }
    std::printf("max relative gradient deviation %.3e over %zu cases (%.0f ms)\n", r.max_deviation, r.cases.size(),
                r.wall_ms);
    return r.max_deviation <= 1e-5 ? 0 : 1;
}

int oracle(const std::string& problem, int n_sub, int n_pts, const std::string& csv)
{
    const OracleReport r = run_oracle(problem, n_sub, n_pts);
    const std::size_t stride = std::max<std::size_t>(1, r.rows.size() / 640);
    std::printf("%-4s %-22s %-22s %-22s %-22s %s\n", "what", "x", "y1", "analytic", "quadrature", "abs_diff");
    for (std::size_t i = 0; i < r.rows.size(); i += stride) {
        const auto& w = r.rows[i];
        std::printf("%-4s %-22.15g %-22.15g %-22.17g %-22.17g %.3e\n", w.what.c_str(), w.x, w.y1, w.analytic,
                    w.quadrature, std::abs(w.analytic - w.quadrature));
    }
    if (stride > 1) {
        std::printf("(every %zu-th of %zu rows shown)\n", stride, r.rows.size());
    }
    if (!csv.empty()) {
        std::ofstream os(csv);
        if (!os) {
            throw ConfigError("cannot write " + csv);
        }
        os.precision(17);
        os << "what,x,y1,analytic,quadrature\n";
        for (const auto& w : r.rows) {
            os << w.what << ',' << w.x << ',' << w.y1 << ',' << w.analytic << ',' << w.quadrature << '\n';
        }
    }
    std::printf("max deviation %.3e\n", r.max_deviation);
    return r.max_deviation <= 1e-12 ? 0 : 1;
}

int quadcheck()
{
    const QuadcheckReport r = run_quadcheck();
    std::printf("16-point rule, x^k for k <= 31: max relative error %.3e (limit 1e-14)\n", r.monomial_rel);
    std::printf("weight sums, n <= 32: max relative error %.3e (limit 1e-13)\n", r.weight_sum_rel);
    return r.monomial_rel <= 1e-14 && r.weight_sum_rel <= 1e-13 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Tensor neural network homogenization of multiscale elliptic problems"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    app.add_option("--config", c.config, "pipeline configuration (JSON)");
    app.add_option("--seed", c.seed, "seed for every training stage")->each([&](const std::string&) {
        c.seed_set = true;
    });
    app.add_option("--threads", c.threads, "cap on worker threads")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", c.deterministic, "record zero wall times so reruns are byte-identical");
    app.add_option("--out", c.out, "output directory (fallback: $TENSHOM_OUT, then the config)");
    app.add_flag("-q,--quiet", c.quiet, "no progress messages on stderr");

    struct Sub {
        const char* name;
        const char* help;
        Stage until;
    };
    const Sub stages[] = {
        {"run", "all stages: cells, homogenized coefficient, macro, reconstruction, FEM comparison", Stage::compare},
        {"cell", "train the cell problems (and compare 1D corrector slices with FEM)", Stage::cell},
        {"homogenize", "cell problems and homogenized coefficient tables", Stage::homogenize},
        {"macro", "through the homogenized (macro) problem", Stage::macro},
        {"reconstruct", "through the multiscale reconstruction and solution CSVs", Stage::reconstruct},
        {"compare-fem", "the full pipeline including the FEM eps sweep, reusing checkpoints", Stage::compare},
    };
    Stage chosen = Stage::compare;
    for (const auto& s : stages) {
        app.add_subcommand(s.name, s.help)->callback([&chosen, u = s.until] { chosen = u; });
    }

    std::uint64_t gc_seed = 7;
    int gc_cases = 50;
    auto* gc = app.add_subcommand("gradcheck", "reverse-mode gradients vs finite differences");
    gc->add_option("--cases", gc_cases, "number of random models")->check(CLI::PositiveNumber);

    std::string problem = "ex_1D";
    int n_sub = 40;
    int n_pts = 16;
    std::string oracle_csv;
    auto* orc = app.add_subcommand("oracle", "analytic vs quadrature homogenized coefficient");
    orc->add_option("--problem", problem, "ex_1D or ex_1D_3scale");
    orc->add_option("--n-sub", n_sub, "subintervals per dimension");
    orc->add_option("--n-pts", n_pts, "Gauss points per subinterval");
    orc->add_option("--csv", oracle_csv, "write every row to this file");

    auto* qc = app.add_subcommand("quadcheck", "Gauss-Legendre exactness checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    }

    if (c.threads > 0) {
        Eigen::setNbThreads(c.threads);
    }
    try {
        if (gc->parsed()) {
            return gradcheck(c.seed_set ? c.seed : gc_seed, gc_cases);
        }
        if (orc->parsed()) {
            return oracle(problem, n_sub, n_pts, oracle_csv);
        }
        if (qc->parsed()) {
            return quadcheck();
        }
        return run_stage(c, chosen);
    } catch (const TrainingError& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 3;
    } catch (const ReferenceError& e) {
        std::cerr << "reference solver failure: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const EllipticityError& e) {
        std::cerr << "configuration error (ellipticity): " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
