#include "tenshom/coeffs.hpp"

#include "tenshom/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <regex>
#include <set>

namespace tenshom {

namespace {

constexpr double kPi = std::numbers::pi;

}  // namespace

std::array<double, 3> Primitive1D::eval(double x) const
{
    switch (kind) {
    case Kind::sin_freq: {
        const double s = std::sin(omega * x);
        return {s, omega * std::cos(omega * x), -omega * omega * s};
    }
    case Kind::cos_freq: {
        const double c = std::cos(omega * x);
        return {c, -omega * std::sin(omega * x), -omega * omega * c};
    }
    case Kind::constant:
        return {value_c, 0.0, 0.0};
    case Kind::poly: {
        double v = 0.0;
        double d1 = 0.0;
        double d2 = 0.0;
        for (std::size_t k = poly.size(); k-- > 0;) {
            d2 = d2 * x + 2.0 * d1;
            d1 = d1 * x + v;
            v = v * x + poly[k];
        }
        return {v, d1, d2};
    }
    }
    throw InternalError("Primitive1D: unknown kind");
}

std::vector<int> SeparableExpr::dims() const
{
    std::set<int> s;
    for (const auto& t : terms) {
        for (const auto& f : t.factors) {
            s.insert(f.first);
        }
    }
    return {s.begin(), s.end()};
}

double SeparableExpr::value(std::span<const double> point) const
{
    double v = 0.0;
    for (const auto& t : terms) {
        double p = t.scale;
        for (const auto& [dim, prim] : t.factors) {
            p *= prim.eval(point[static_cast<std::size_t>(dim)])[0];
        }
        v += p;
    }
    return v;
}

double SeparableExpr::partial(std::span<const double> point, int dim) const
{
    double v = 0.0;
    for (const auto& t : terms) {
        double p = t.scale;
        bool hit = false;
        for (const auto& [d, prim] : t.factors) {
            const auto e = prim.eval(point[static_cast<std::size_t>(d)]);
            if (d == dim) {
                p *= e[1];
                hit = true;
            } else {
                p *= e[0];
            }
        }
        if (hit) {
            v += p;
        }
    }
    return v;
}

bool SeparableExpr::depends_on(int dim) const
{
    for (const auto& t : terms) {
        for (const auto& [d, prim] : t.factors) {
            if (d == dim && !prim.is_constant()) {
                return true;
            }
        }
    }
    return false;
}

std::vector<int> TensorCoefficient::dims() const
{
    std::set<int> s;
    for (const auto& e : entries) {
        for (int d : e.dims()) {
            s.insert(d);
        }
    }
    return {s.begin(), s.end()};
}

void TensorCoefficient::validate() const
{
    if (d < 1 || d > 2) {
        throw ConfigError("coefficient: d must be 1 or 2");
    }
    if (K < 1 || K > 2) {
        throw ConfigError("coefficient: K must be 1 or 2");
    }
    if (static_cast<int>(entries.size()) != d * d) {
        throw ConfigError("coefficient: expected d*d entries");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw ConfigError("coefficient: gamma must lie in (0, 1]");
    }
    const int total = (K + 1) * d;
    for (const auto& e : entries) {
        if (e.terms.empty()) {
            throw ConfigError("coefficient: empty entry");
        }
        for (const auto& t : e.terms) {
            std::set<int> seen;
            for (const auto& f : t.factors) {
                if (f.first < 0 || f.first >= total) {
                    throw ConfigError("coefficient: factor dimension out of range");
                }
                if (!seen.insert(f.first).second) {
                    throw ConfigError("coefficient: a term lists the same dimension twice");
                }
            }
        }
    }
    if (d == 2) {
        const nlohmann::json a = expr_to_json(entry(0, 1));
        const nlohmann::json b = expr_to_json(entry(1, 0));
        if (a != b) {
            throw ConfigError("coefficient: off-diagonal entries must be identical (symmetry)");
        }
    }
}

TensorCoefficient TensorCoefficient::isotropic(int d, int K, SeparableExpr a, double gamma)
{
    TensorCoefficient c;
    c.d = d;
    c.K = K;
    c.gamma = gamma;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            if (i == j) {
                c.entries.push_back(a);
            } else {
                c.entries.push_back(SeparableExpr{{ExprTerm{0.0, {}}}});
            }
        }
    }
    return c;
}

std::vector<int> SampledCoefficient::dims() const
{
    std::set<int> s;
    for (const auto& e : entries) {
        s.insert(e.dims.begin(), e.dims.end());
    }
    return {s.begin(), s.end()};
}

Problem builtin(const std::string& name)
{
    using P = Primitive1D;
    const double w = 2.0 * kPi;
    Problem pr;
    pr.name = name;
    if (name == "ex_1D") {
        pr.d = 1;
        pr.K = 1;
        SeparableExpr a{{ExprTerm{0.5, {{1, P::sin_freq(w)}}}, ExprTerm{1.0, {{0, P::sin_freq(1.0)}}},
                         ExprTerm{2.0, {}}}};
        pr.coeff = TensorCoefficient::isotropic(1, 1, a, 0.25);
        pr.source = SeparableExpr{{ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}}};
        pr.domain = {{0.0, kPi}};
    } else if (name == "ex_2D_1") {
        pr.d = 2;
        pr.K = 1;
        SeparableExpr a{{ExprTerm{2.0, {}}, ExprTerm{1.0, {{2, P::sin_freq(w)}, {3, P::cos_freq(w)}}}}};
        pr.coeff = TensorCoefficient::isotropic(2, 1, a, 0.25);
        pr.source = SeparableExpr{{ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}, ExprTerm{1.0, {{1, P::cos_freq(1.0)}}}}};
        pr.domain = {{0.0, 1.0}, {0.0, 1.0}};
    } else if (name == "ex_2D_2") {
        pr.d = 2;
        pr.K = 1;
        SeparableExpr a{{ExprTerm{0.5, {{2, P::sin_freq(w)}, {3, P::sin_freq(w)}}},
                         ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}, ExprTerm{1.0, {{1, P::sin_freq(1.0)}}},
                         ExprTerm{3.0, {}}}};
        pr.coeff = TensorCoefficient::isotropic(2, 1, a, 0.18);
        pr.source = SeparableExpr{{ExprTerm{1.0, {{0, P::sin_freq(1.0)}, {1, P::sin_freq(1.0)}}}}};
        pr.domain = {{0.0, kPi}, {0.0, kPi}};
    } else if (name == "ex_1D_3scale") {
        pr.d = 1;
        pr.K = 2;
        SeparableExpr a{{ExprTerm{0.5, {{2, P::sin_freq(w)}}}, ExprTerm{1.0, {{1, P::sin_freq(w)}}},
                         ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}, ExprTerm{3.0, {}}}};
        pr.coeff = TensorCoefficient::isotropic(1, 2, a, 0.18);
        pr.source = SeparableExpr{{ExprTerm{1.0, {{0, P::sin_freq(1.0)}}}}};
        pr.domain = {{0.0, kPi}};
    } else {
        throw ConfigError("unknown builtin problem '" + name + "'");
    }
    return pr;
}

std::vector<std::string> builtin_names()
{
    return {"ex_1D", "ex_2D_1", "ex_2D_2", "ex_1D_3scale"};
}

Separable sample_expr(const SeparableExpr& expr, const TensorGrid& grid)
{
    Separable s;
    s.grid = &grid;
    s.dims = expr.dims();
    const auto r = static_cast<Eigen::Index>(expr.terms.size());
    s.coeffs.resize(r, 1);
    for (Eigen::Index t = 0; t < r; ++t) {
        s.coeffs(t, 0) = expr.terms[static_cast<std::size_t>(t)].scale;
    }
    for (int dim : s.dims) {
        const auto& x = grid.rule(dim).nodes();
        const auto n = static_cast<Eigen::Index>(x.size());
        Factor<Mat> fac{Mat::Ones(r, n), Mat::Zero(r, n), Mat::Zero(r, n)};
        std::vector<std::uint8_t> flat(static_cast<std::size_t>(r), 1);
        for (Eigen::Index t = 0; t < r; ++t) {
            for (const auto& [d, prim] : expr.terms[static_cast<std::size_t>(t)].factors) {
                if (d != dim) {
                    continue;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const auto e = prim.eval(x[static_cast<std::size_t>(i)]);
                    fac.values(t, i) = e[0];
                    (*fac.d1)(t, i) = e[1];
                    (*fac.d2)(t, i) = e[2];
                }
                flat[static_cast<std::size_t>(t)] = prim.is_constant() ? 1 : 0;
            }
        }
        s.factors.push_back(std::move(fac));
        s.flat.push_back(std::move(flat));
    }
    return s;
}

SampledCoefficient sample_coefficient(const TensorCoefficient& coeff, const TensorGrid& grid)
{
    SampledCoefficient s;
    s.d = coeff.d;
    for (const auto& e : coeff.entries) {
        s.entries.push_back(sample_expr(e, grid));
    }
    return s;
}

namespace {

// Per-term factor tables of a scalar expression over a dimension list.
struct TermTables {
    std::vector<double> scale;
    std::vector<Mat> table;  ///< per dim: terms x nodes
};

TermTables term_tables(const SeparableExpr& e, const TensorGrid& grid, const std::vector<int>& dims)
{
    const Separable s = sample_expr(e, grid);
    TermTables tt;
    tt.scale.assign(s.coeffs.data(), s.coeffs.data() + s.coeffs.size());
    for (int d : dims) {
        const int p = s.position(d);
        const auto n = static_cast<Eigen::Index>(grid.rule(d).size());
        tt.table.push_back(p < 0 ? Mat::Ones(s.rank(), n) : s.factors[static_cast<std::size_t>(p)].values);
    }
    return tt;
}

// Visit the node product of `dims`, optionally strided, passing per-dim node indices.
template <class Fn>
void visit_nodes(const std::vector<Eigen::Index>& n, const std::vector<Eigen::Index>& stride, Fn&& fn)
{
    std::vector<Eigen::Index> idx(n.size(), 0);
    if (n.empty()) {
        fn(idx);
        return;
    }
    while (true) {
        fn(idx);
        std::size_t k = n.size();
        while (k-- > 0) {
            idx[k] += stride.empty() ? 1 : stride[k];
            if (idx[k] < n[k]) {
                break;
            }
            idx[k] = 0;
            if (k == 0) {
                return;
            }
        }
    }
}

}  // namespace

Tabulated harmonic_homogenized_1d(const TensorCoefficient& coeff, const TensorGrid& grid,
                                  const std::vector<int>& keep_dims)
{
    if (coeff.d != 1) {
        throw UsageError("harmonic_homogenized_1d: requires d = 1");
    }
    std::vector<int> integ;
    for (int d : coeff.dims()) {
        if (std::find(keep_dims.begin(), keep_dims.end(), d) == keep_dims.end()) {
            integ.push_back(d);
        }
    }
    std::vector<int> all = keep_dims;
    all.insert(all.end(), integ.begin(), integ.end());
    const TermTables tt = term_tables(coeff.entry(0, 0), grid, all);
    const std::size_t nk = keep_dims.size();

    Tabulated out;
    out.dims = keep_dims;
    std::vector<Eigen::Index> nkeep;
    std::vector<Eigen::Index> ninteg;
    for (int d : keep_dims) {
        nkeep.push_back(static_cast<Eigen::Index>(grid.rule(d).size()));
    }
    for (int d : integ) {
        ninteg.push_back(static_cast<Eigen::Index>(grid.rule(d).size()));
    }
    out.shape = nkeep;
    const std::size_t n_terms = tt.scale.size();
    std::vector<double> partial(n_terms);
    visit_nodes(nkeep, {}, [&](const std::vector<Eigen::Index>& ki) {
        for (std::size_t t = 0; t < n_terms; ++t) {
            double p = tt.scale[t];
            for (std::size_t k = 0; k < nk; ++k) {
                p *= tt.table[k](static_cast<Eigen::Index>(t), ki[k]);
            }
            partial[t] = p;
        }
        double inv = 0.0;
        visit_nodes(ninteg, {}, [&](const std::vector<Eigen::Index>& ii) {
            double a = 0.0;
            double w = 1.0;
            for (std::size_t t = 0; t < n_terms; ++t) {
                double p = partial[t];
                for (std::size_t k = 0; k < ii.size(); ++k) {
                    p *= tt.table[nk + k](static_cast<Eigen::Index>(t), ii[k]);
                }
                a += p;
            }
            for (std::size_t k = 0; k < ii.size(); ++k) {
                w *= grid.rule(integ[k]).weights()[static_cast<std::size_t>(ii[k])];
            }
            if (!(a > 0.0)) {
                throw EllipticityError("harmonic_homogenized_1d: non-positive coefficient sampled");
            }
            inv += w / a;
        });
        out.values.push_back(1.0 / inv);
    });
    return out;
}

namespace {

std::array<double, 2> sym_eigs(double a11, double a12, double a22)
{
    const double m = 0.5 * (a11 + a22);
    const double r = std::sqrt(0.25 * (a11 - a22) * (a11 - a22) + a12 * a12);
    return {m - r, m + r};
}

std::vector<Eigen::Index> strides_for(const std::vector<Eigen::Index>& n, std::size_t max_points)
{
    std::vector<Eigen::Index> stride(n.size(), 1);
    if (n.empty()) {
        return stride;
    }
    const double per_dim = std::pow(static_cast<double>(max_points), 1.0 / static_cast<double>(n.size()));
    for (std::size_t k = 0; k < n.size(); ++k) {
        if (static_cast<double>(n[k]) > per_dim) {
            stride[k] = static_cast<Eigen::Index>(std::ceil(static_cast<double>(n[k]) / per_dim));
        }
    }
    return stride;
}

void record(EllipticityReport& rep, std::array<double, 2> e, double gamma)
{
    if (rep.checked == 0) {
        rep.min_eig = e[0];
        rep.max_eig = e[1];
    }
    rep.min_eig = std::min(rep.min_eig, e[0]);
    rep.max_eig = std::max(rep.max_eig, e[1]);
    ++rep.checked;
    if (e[0] < gamma || e[1] > 1.0 / gamma || !std::isfinite(e[0]) || !std::isfinite(e[1])) {
        ++rep.violations;
    }
}

}  // namespace

EllipticityReport check_ellipticity(const TensorCoefficient& coeff, const TensorGrid& grid, bool throw_on_violation,
                                    std::size_t max_points)
{
    const std::vector<int> dims = coeff.dims();
    std::vector<TermTables> tabs;
    for (const auto& e : coeff.entries) {
        tabs.push_back(term_tables(e, grid, dims));
    }
    std::vector<Eigen::Index> n;
    for (int d : dims) {
        n.push_back(static_cast<Eigen::Index>(grid.rule(d).size()));
    }
    EllipticityReport rep;
    auto value = [&](const TermTables& tt, const std::vector<Eigen::Index>& idx) {
        double v = 0.0;
        for (std::size_t t = 0; t < tt.scale.size(); ++t) {
            double p = tt.scale[t];
            for (std::size_t k = 0; k < idx.size(); ++k) {
                p *= tt.table[k](static_cast<Eigen::Index>(t), idx[k]);
            }
            v += p;
        }
        return v;
    };
    visit_nodes(n, strides_for(n, max_points), [&](const std::vector<Eigen::Index>& idx) {
        if (coeff.d == 1) {
            const double a = value(tabs[0], idx);
            record(rep, {a, a}, coeff.gamma);
        } else {
            record(rep, sym_eigs(value(tabs[0], idx), value(tabs[1], idx), value(tabs[3], idx)), coeff.gamma);
        }
    });
    if (throw_on_violation && rep.violations > 0) {
        throw EllipticityError("coefficient eigenvalues leave [" + std::to_string(coeff.gamma) + ", " +
                               std::to_string(1.0 / coeff.gamma) + "] at " + std::to_string(rep.violations) +
                               " of " + std::to_string(rep.checked) + " checked nodes (range " +
                               std::to_string(rep.min_eig) + " .. " + std::to_string(rep.max_eig) + ")");
    }
    return rep;
}

EllipticityReport check_ellipticity(const SampledCoefficient& coeff, const TensorGrid& grid, double gamma,
                                    std::size_t max_points)
{
    const std::vector<int> dims = coeff.dims();
    std::vector<Eigen::Index> n;
    for (int d : dims) {
        n.push_back(static_cast<Eigen::Index>(grid.rule(d).size()));
    }
    auto value = [&](const Separable& s, const std::vector<Eigen::Index>& idx) {
        double v = 0.0;
        for (Eigen::Index r = 0; r < s.rank(); ++r) {
            double p = s.coeffs(r, 0);
            for (std::size_t k = 0; k < s.dims.size(); ++k) {
                const auto pos = static_cast<std::size_t>(std::find(dims.begin(), dims.end(), s.dims[k]) - dims.begin());
                p *= s.factors[k].values(r, idx[pos]);
            }
            v += p;
        }
        return v;
    };
    EllipticityReport rep;
    visit_nodes(n, strides_for(n, max_points), [&](const std::vector<Eigen::Index>& idx) {
        if (coeff.d == 1) {
            const double a = value(coeff.entries[0], idx);
            record(rep, {a, a}, gamma);
        } else {
            const double a12 = 0.5 * (value(coeff.entries[1], idx) + value(coeff.entries[2], idx));
            record(rep, sym_eigs(value(coeff.entries[0], idx), a12, value(coeff.entries[3], idx)), gamma);
        }
    });
    return rep;
}

int dim_from_name(const std::string& name, int d)
{
    static const std::regex slow("x([0-9]*)");
    static const std::regex fast("y([0-9])(?:_([0-9]))?");
    std::smatch m;
    if (std::regex_match(name, m, slow)) {
        const int axis = m[1].length() == 0 ? 1 : std::stoi(m[1].str());
        if (axis < 1 || axis > d || (m[1].length() == 0 && d != 1)) {
            throw ConfigError("dimension name '" + name + "' does not fit d = " + std::to_string(d));
        }
        return axis - 1;
    }
    if (std::regex_match(name, m, fast)) {
        const int group = std::stoi(m[1].str());
        int axis = 1;
        if (m[2].matched) {
            axis = std::stoi(m[2].str());
        } else if (d != 1) {
            throw ConfigError("dimension name '" + name + "' needs an axis suffix for d = " + std::to_string(d));
        }
        if (group < 1 || group > 2 || axis < 1 || axis > d) {
            throw ConfigError("dimension name '" + name + "' out of range");
        }
        return group * d + axis - 1;
    }
    throw ConfigError("unrecognised dimension name '" + name + "'");
}

Primitive1D primitive_from_json(const nlohmann::json& j)
{
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "sin_freq" || kind == "cos_freq") {
        double omega = 0.0;
        if (j.contains("omega")) {
            omega = j.at("omega").get<double>();
        } else if (j.contains("k")) {
            omega = 2.0 * kPi * j.at("k").get<double>();
        } else {
            throw ConfigError("primitive '" + kind + "' needs 'omega' or 'k'");
        }
        return kind == "sin_freq" ? Primitive1D::sin_freq(omega) : Primitive1D::cos_freq(omega);
    }
    if (kind == "const") {
        return Primitive1D::constant(j.at("value").get<double>());
    }
    if (kind == "poly") {
        return Primitive1D::polynomial(j.at("coeffs").get<std::vector<double>>());
    }
    throw ConfigError("unknown primitive kind '" + kind + "'");
}

nlohmann::json primitive_to_json(const Primitive1D& p)
{
    switch (p.kind) {
    case Primitive1D::Kind::sin_freq:
        return {{"kind", "sin_freq"}, {"omega", p.omega}};
    case Primitive1D::Kind::cos_freq:
        return {{"kind", "cos_freq"}, {"omega", p.omega}};
    case Primitive1D::Kind::constant:
        return {{"kind", "const"}, {"value", p.value_c}};
    case Primitive1D::Kind::poly:
        return {{"kind", "poly"}, {"coeffs", p.poly}};
    }
    throw InternalError("primitive_to_json: unknown kind");
}

SeparableExpr expr_from_json(const nlohmann::json& j, int d)
{
    try {
        SeparableExpr e;
        for (const auto& t : j.at("terms")) {
            ExprTerm term;
            term.scale = t.value("scale", 1.0);
            for (const auto& f : t.value("factors", nlohmann::json::array())) {
                const auto& dj = f.at("dim");
                const int dim = dj.is_number_integer() ? dj.get<int>() : dim_from_name(dj.get<std::string>(), d);
                term.factors.emplace_back(dim, primitive_from_json(f));
            }
            e.terms.push_back(std::move(term));
        }
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("coefficient expression: ") + ex.what());
    }
}

nlohmann::json expr_to_json(const SeparableExpr& e)
{
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : e.terms) {
        nlohmann::json factors = nlohmann::json::array();
        for (const auto& [dim, prim] : t.factors) {
            nlohmann::json f = primitive_to_json(prim);
            f["dim"] = dim;
            factors.push_back(std::move(f));
        }
        terms.push_back({{"scale", t.scale}, {"factors", factors}});
    }
    return {{"terms", terms}};
}

}  // namespace tenshom
