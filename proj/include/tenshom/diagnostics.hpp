#pragma once

// Self-checks shared by the CLI and the acceptance runner: finite-difference
// gradient checks of both loss assemblies, quadrature exactness, and the
// harmonic-mean oracle for one-dimensional problems.

#include "tenshom/coeffs.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tenshom {

struct GradcheckCase {
    std::string kind;          ///< e.g. "cell-1d/dense"
    std::size_t n_checked = 0;
    double max_deviation = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckCase> cases;
    /// max over components of |g - fd| / max(|fd|, 1e-3), so <= 1e-5 means
    /// |g - fd| <= max(1e-5 |fd|, 1e-8).
    double max_deviation = 0.0;
    double wall_ms = 0.0;
};

/// `n_cases` random small models cycling through cell and macro losses, 1D and
/// 2D, separable and dense routes. At most `max_params` components per case
/// are differenced (Richardson-extrapolated central differences).
[[nodiscard]] GradcheckReport run_gradcheck(std::uint64_t seed, int n_cases = 50, int max_params = 40);

struct QuadcheckReport {
    double monomial_rel = 0.0;    ///< worst relative error on x^k, k <= 31, 16-point rule on [0, 1]
    double weight_sum_rel = 0.0;  ///< worst |sum w - length| / length over n and subdivisions
};
[[nodiscard]] QuadcheckReport run_quadcheck();

struct OracleRow {
    std::string what;     ///< "A0" or "A1"
    double x = 0.0;
    double y1 = 0.0;
    double analytic = 0.0;
    double quadrature = 0.0;
};

struct OracleReport {
    std::vector<OracleRow> rows;
    double max_deviation = 0.0;
};

/// Closed-form harmonic means against the grid quadrature. ex_1D: A0(x); ex_1D_3scale:
/// A1(x, y1). Throws ConfigError for problems without an analytic form.
[[nodiscard]] OracleReport run_oracle(const std::string& problem, int n_sub = 40, int n_pts = 16);

/// Analytic A0 (ex_1D) or A1 (ex_1D_3scale) at a point; ConfigError otherwise.
[[nodiscard]] double analytic_homogenized(const std::string& problem, double x, double y1 = 0.0);

}  // namespace tenshom
