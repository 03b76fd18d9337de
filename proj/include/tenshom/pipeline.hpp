#pragma once

// End-to-end orchestration: configuration, the cell -> homogenize -> macro ->
// reconstruct -> FEM comparison stages, checkpoints and reports.

#include "tenshom/coeffs.hpp"
#include "tenshom/optim.hpp"
#include "tenshom/quadrature.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tenshom {

struct GridAxisSpec {
    int n_sub = 40;
    int n_pts = 16;

    bool operator==(const GridAxisSpec&) const = default;
};

struct FemConfig {
    int n_1d = 0;             ///< 0: mesh_1d_for(eps, K)
    int n_2d = 0;             ///< 0: mesh_2d_for(eps)
    int n_u0 = 4096;          ///< homogenized (u0) reference mesh, 1D
    int cell_n_el = 4096;     ///< periodic slice reference
    int slice_points = 20;
    std::string cache_dir;    ///< empty: <out>/fem_cache

    bool operator==(const FemConfig&) const = default;
};

struct PipelineConfig {
    /// Builtin name, or "custom" together with `custom`.
    std::string problem = "ex_1D";
    /// {"name", "d", "K", "coefficient": expr, "gamma", "source": expr, "domain": [[lo, hi], ...]}
    std::optional<nlohmann::json> custom;
    int K = 1;
    int d = 1;
    /// One entry per scale group (x, y1[, y2]), applied to every axis of the group.
    std::vector<GridAxisSpec> grid;
    /// Per-dimension overrides keyed by dimension name ("x", "y1", "x2", "y1_2", ...).
    std::map<std::string, GridAxisSpec> grid_overrides;
    /// Stage s trains the cell problem of group K - s (finest first).
    std::vector<TrainConfig> cell;
    TrainConfig macro;
    std::vector<double> eps{0.2, 0.1, 0.05};
    FemConfig fem;
    std::string out = "out";
    bool deterministic = false;
    std::uint64_t seed = 1;
    /// "tnn": A0 from the trained correctors. "analytic": harmonic mean by quadrature (d = 1).
    std::string macro_a0 = "tnn";
    int plot_points = 201;
    /// Save a model snapshot every so many steps (multiples of log_every); 0 keeps final models only.
    int checkpoint_every = 0;
    /// Reuse final checkpoints whose fingerprint matches.
    bool reuse_checkpoints = true;

    /// Throws ConfigError.
    void validate() const;
    [[nodiscard]] Problem resolve_problem() const;
    [[nodiscard]] TensorGrid build_grid(const Problem& p) const;
    /// Training configs with the pipeline seed applied.
    [[nodiscard]] std::vector<TrainConfig> stage_configs() const;
    [[nodiscard]] TrainConfig macro_config() const;

    bool operator==(const PipelineConfig& o) const;
};

[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});
[[nodiscard]] nlohmann::json train_config_to_json(const TrainConfig& c);
[[nodiscard]] PipelineConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json config_to_json(const PipelineConfig& c);
/// Reads and parses a JSON file; ConfigError on I/O or parse failure.
[[nodiscard]] PipelineConfig load_config(const std::string& path);

/// Dimension name used in configs and tables ("x" / "x1", "y1" / "y1_2", ...).
[[nodiscard]] std::string dim_name(int dim, int d);

enum class Stage { cell, homogenize, macro, reconstruct, compare };
[[nodiscard]] std::string to_string(Stage s);

struct EpsError {
    double eps = 0.0;
    int mesh = 0;
    double abs_l2 = 0.0;
    double rel_l2 = 0.0;
    double h1_abs = 0.0;
    double h1_rel = 0.0;
    double h1_leading_abs = -1.0;   ///< grad u0 + grad_y u1 comparator (1D only)
    double h1_leading_rel = -1.0;
    bool cached = false;
};

struct PipelineResult {
    nlohmann::json summary;
    std::vector<EpsError> errors;
    std::vector<std::string> warnings;
};

/// Runs the stages up to and including `until` and writes artifacts under cfg.out.
/// Stage failures are rethrown with the stage name prefixed, keeping the error type.
[[nodiscard]] PipelineResult run_pipeline(const PipelineConfig& cfg, Stage until = Stage::compare,
                                          std::ostream* log = nullptr);

/// Human-readable rendering of a summary document.
[[nodiscard]] std::string summary_text(const nlohmann::json& summary);

}  // namespace tenshom
