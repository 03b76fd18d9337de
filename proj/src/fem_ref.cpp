#include "tenshom/fem_ref.hpp"

#include "tenshom/error.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace tenshom {

static_assert(std::endian::native == std::endian::little, "cache layout assumes a little-endian host");

Mesh1D Mesh1D::uniform(Interval1D interval, int n_el)
{
    if (n_el < 2) {
        throw UsageError("Mesh1D: need at least two elements");
    }
    if (!(interval.hi > interval.lo)) {
        throw UsageError("Mesh1D: empty interval");
    }
    Mesh1D m;
    m.interval = interval;
    m.n_el = n_el;
    m.nodes.resize(static_cast<std::size_t>(n_el) + 1);
    for (int i = 0; i <= n_el; ++i) {
        m.nodes[static_cast<std::size_t>(i)] = interval.lo + interval.length() * i / n_el;
    }
    m.nodes.back() = interval.hi;
    return m;
}

namespace {

// Element index and local coordinate t in [0,1] of x on a uniform partition.
std::pair<int, double> locate(double lo, double len, int n, double x)
{
    const double s = (x - lo) / len * n;
    int e = static_cast<int>(std::floor(s));
    e = std::clamp(e, 0, n - 1);
    return {e, s - e};
}

void require_inside(const Interval1D& iv, double x, const char* who)
{
    const double tol = 1e-12 * std::max(1.0, iv.length());
    if (x < iv.lo - tol || x > iv.hi + tol) {
        throw UsageError(std::string(who) + ": point outside the mesh");
    }
}

// Solves a tridiagonal system in place (Thomas); sub/sup have n-1 entries.
std::vector<double> thomas(std::vector<double> sub, std::vector<double> diag, std::vector<double> sup,
                           std::vector<double> rhs)
{
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        if (diag[i - 1] == 0.0) {
            throw ReferenceError("tridiagonal solve: zero pivot");
        }
        const double m = sub[i - 1] / diag[i - 1];
        diag[i] -= m * sup[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    std::vector<double> x(n);
    x[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        x[i] = (rhs[i] - sup[i] * x[i + 1]) / diag[i];
    }
    return x;
}

const std::array<double, 2> kG2{0.5 - 0.5 / std::numbers::sqrt3, 0.5 + 0.5 / std::numbers::sqrt3};

}  // namespace

double P1Function::value(double x) const
{
    require_inside(mesh.interval, x, "P1Function::value");
    const auto [e, t] = locate(mesh.interval.lo, mesh.interval.length(), mesh.n_el, x);
    return (1.0 - t) * u[static_cast<std::size_t>(e)] + t * u[static_cast<std::size_t>(e) + 1];
}

double P1Function::derivative(double x) const
{
    require_inside(mesh.interval, x, "P1Function::derivative");
    const auto [e, t] = locate(mesh.interval.lo, mesh.interval.length(), mesh.n_el, x);
    (void)t;
    return (u[static_cast<std::size_t>(e) + 1] - u[static_cast<std::size_t>(e)]) / mesh.h();
}

P1Function solve_dirichlet_1d(const Fn1& a, const Fn1& f, const Mesh1D& mesh)
{
    const int n = mesh.n_el;
    const double h = mesh.h();
    // Element integrals: ka = int a / h^2 * h, load split by hat functions.
    std::vector<double> ke(static_cast<std::size_t>(n));
    std::vector<double> fl(static_cast<std::size_t>(n));
    std::vector<double> fr(static_cast<std::size_t>(n));
    for (int e = 0; e < n; ++e) {
        const double x0 = mesh.nodes[static_cast<std::size_t>(e)];
        double ia = 0.0;
        double l = 0.0;
        double r = 0.0;
        for (double t : kG2) {
            const double x = x0 + t * h;
            const double av = a(x);
            if (!(av > 0.0)) {
                throw EllipticityError("solve_dirichlet_1d: coefficient not positive at x = " + std::to_string(x));
            }
            ia += 0.5 * av;
            const double fv = f(x);
            l += 0.5 * fv * (1.0 - t) * h;
            r += 0.5 * fv * t * h;
        }
        ke[static_cast<std::size_t>(e)] = ia / h;
        fl[static_cast<std::size_t>(e)] = l;
        fr[static_cast<std::size_t>(e)] = r;
    }
    const std::size_t m = static_cast<std::size_t>(n) - 1;  // interior nodes 1..n-1
    std::vector<double> diag(m);
    std::vector<double> sub(m > 0 ? m - 1 : 0);
    std::vector<double> sup(m > 0 ? m - 1 : 0);
    std::vector<double> rhs(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t node = i + 1;
        diag[i] = ke[node - 1] + ke[node];
        rhs[i] = fr[node - 1] + fl[node];
        if (i + 1 < m) {
            sup[i] = -ke[node];
            sub[i] = -ke[node];
        }
    }
    const auto x = thomas(sub, diag, sup, rhs);
    P1Function out{mesh, std::vector<double>(static_cast<std::size_t>(n) + 1, 0.0)};
    std::copy(x.begin(), x.end(), out.u.begin() + 1);
    return out;
}

CellSolution1D solve_cell_periodic_1d(const Fn1& a, int n_el)
{
    const Mesh1D mesh = Mesh1D::uniform({0.0, 1.0}, n_el);
    const double h = mesh.h();
    std::vector<double> abar(static_cast<std::size_t>(n_el));
    for (int e = 0; e < n_el; ++e) {
        double ia = 0.0;
        for (double t : kG2) {
            const double av = a(mesh.nodes[static_cast<std::size_t>(e)] + t * h);
            if (!(av > 0.0)) {
                throw ReferenceError("solve_cell_periodic_1d: coefficient not positive; system is singular");
            }
            ia += 0.5 * av;
        }
        abar[static_cast<std::size_t>(e)] = ia;
    }
    // Unknowns chi_1..chi_{n-1}; chi_0 = chi_n pinned to 0, mean removed afterwards.
    // Row i: (abar_{i-1} + abar_i)/h chi_i - abar_{i-1}/h chi_{i-1} - abar_i/h chi_{i+1} = abar_i - abar_{i-1}.
    const std::size_t m = static_cast<std::size_t>(n_el) - 1;
    std::vector<double> diag(m);
    std::vector<double> sub(m - 1);
    std::vector<double> sup(m - 1);
    std::vector<double> rhs(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t node = i + 1;
        const double al = abar[node - 1];
        const double ar = abar[node];
        diag[i] = (al + ar) / h;
        rhs[i] = ar - al;
        if (i + 1 < m) {
            sup[i] = -ar / h;
            sub[i] = -ar / h;
        }
    }
    const auto x = thomas(sub, diag, sup, rhs);
    CellSolution1D out;
    out.chi.mesh = mesh;
    out.chi.u.assign(static_cast<std::size_t>(n_el) + 1, 0.0);
    std::copy(x.begin(), x.end(), out.chi.u.begin() + 1);
    double mean = 0.0;
    for (int e = 0; e < n_el; ++e) {
        mean += 0.5 * h * (out.chi.u[static_cast<std::size_t>(e)] + out.chi.u[static_cast<std::size_t>(e) + 1]);
    }
    for (double& v : out.chi.u) {
        v -= mean;
    }
    double hom = 0.0;
    for (int e = 0; e < n_el; ++e) {
        const double dchi =
            (out.chi.u[static_cast<std::size_t>(e) + 1] - out.chi.u[static_cast<std::size_t>(e)]) / h;
        hom += h * abar[static_cast<std::size_t>(e)] * (1.0 + dchi);
    }
    out.homogenized = hom;
    return out;
}

double Q1Function::value(double x, double y) const
{
    require_inside(ix, x, "Q1Function::value");
    require_inside(iy, y, "Q1Function::value");
    const auto [ex, s] = locate(ix.lo, ix.length(), n, x);
    const auto [ey, t] = locate(iy.lo, iy.length(), n, y);
    const auto at = [&](int i, int j) { return u[static_cast<std::size_t>(j * (n + 1) + i)]; };
    return (1 - s) * (1 - t) * at(ex, ey) + s * (1 - t) * at(ex + 1, ey) + (1 - s) * t * at(ex, ey + 1) +
           s * t * at(ex + 1, ey + 1);
}

std::array<double, 2> Q1Function::gradient(double x, double y) const
{
    require_inside(ix, x, "Q1Function::gradient");
    require_inside(iy, y, "Q1Function::gradient");
    const auto [ex, s] = locate(ix.lo, ix.length(), n, x);
    const auto [ey, t] = locate(iy.lo, iy.length(), n, y);
    const auto at = [&](int i, int j) { return u[static_cast<std::size_t>(j * (n + 1) + i)]; };
    const double hx = ix.length() / n;
    const double hy = iy.length() / n;
    const double gx = ((1 - t) * (at(ex + 1, ey) - at(ex, ey)) + t * (at(ex + 1, ey + 1) - at(ex, ey + 1))) / hx;
    const double gy = ((1 - s) * (at(ex, ey + 1) - at(ex, ey)) + s * (at(ex + 1, ey + 1) - at(ex + 1, ey))) / hy;
    return {gx, gy};
}

Q1System assemble_dirichlet_q1_2d(const TensorFn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n)
{
    if (n < 2) {
        throw UsageError("Q1 mesh needs n >= 2");
    }
    if (n > kMaxQ1Mesh) {
        throw UsageError("Q1 mesh n = " + std::to_string(n) + " exceeds the limit " + std::to_string(kMaxQ1Mesh));
    }
    const double hx = ix.length() / n;
    const double hy = iy.length() / n;
    const int m = n - 1;
    auto unknown = [&](int i, int j) { return (i < 1 || i > m || j < 1 || j > m) ? -1 : (j - 1) * m + (i - 1); };
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(m) * static_cast<std::size_t>(m) * 9);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m) * m);
    // Local node order: (0,0), (1,0), (0,1), (1,1).
    const std::array<int, 4> di{0, 1, 0, 1};
    const std::array<int, 4> dj{0, 0, 1, 1};
    for (int ey = 0; ey < n; ++ey) {
        for (int ex = 0; ex < n; ++ex) {
            double ke[4][4] = {};
            double fe[4] = {};
            for (double s : kG2) {
                for (double t : kG2) {
                    const double x = ix.lo + (ex + s) * hx;
                    const double y = iy.lo + (ey + t) * hy;
                    const auto A = a(x, y);
                    const double det = A[0] * A[2] - A[1] * A[1];
                    if (!(A[0] > 0.0) || !(det > 0.0)) {
                        throw EllipticityError("Q1 assembly: coefficient not positive definite at (" +
                                               std::to_string(x) + ", " + std::to_string(y) + ")");
                    }
                    const double fv = f(x, y);
                    const double w = 0.25 * hx * hy;
                    const double phi[4] = {(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t};
                    const double gx[4] = {-(1 - t) / hx, (1 - t) / hx, -t / hx, t / hx};
                    const double gy[4] = {-(1 - s) / hy, -s / hy, (1 - s) / hy, s / hy};
                    for (int p = 0; p < 4; ++p) {
                        fe[p] += w * fv * phi[p];
                        for (int q = 0; q < 4; ++q) {
                            ke[p][q] += w * (gx[p] * (A[0] * gx[q] + A[1] * gy[q]) + gy[p] * (A[1] * gx[q] + A[2] * gy[q]));
                        }
                    }
                }
            }
            for (int p = 0; p < 4; ++p) {
                const int r = unknown(ex + di[static_cast<std::size_t>(p)], ey + dj[static_cast<std::size_t>(p)]);
                if (r < 0) {
                    continue;
                }
                b(r) += fe[p];
                for (int q = 0; q < 4; ++q) {
                    const int c = unknown(ex + di[static_cast<std::size_t>(q)], ey + dj[static_cast<std::size_t>(q)]);
                    if (c >= 0) {
                        trip.emplace_back(r, c, ke[p][q]);
                    }
                }
            }
        }
    }
    Q1System sys;
    sys.K.resize(static_cast<Eigen::Index>(m) * m, static_cast<Eigen::Index>(m) * m);
    sys.K.setFromTriplets(trip.begin(), trip.end());
    sys.K.makeCompressed();
    sys.b = std::move(b);
    return sys;
}

Q1Function solve_dirichlet_q1_2d(const TensorFn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n, double tol)
{
    const Q1System sys = assemble_dirichlet_q1_2d(a, f, ix, iy, n);
    Eigen::ConjugateGradient<SparseMat, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(tol);
    cg.setMaxIterations(50 * n);
    cg.compute(sys.K);
    const Eigen::VectorXd x = cg.solve(sys.b);
    Q1Function out;
    out.ix = ix;
    out.iy = iy;
    out.n = n;
    out.report.iterations = static_cast<int>(cg.iterations());
    out.report.relative_residual = (sys.K * x - sys.b).norm() / std::max(sys.b.norm(), 1e-300);
    if (cg.info() != Eigen::Success || !(out.report.relative_residual <= 10.0 * tol)) {
        throw ReferenceError("Q1 CG did not converge in " + std::to_string(out.report.iterations) +
                             " iterations (relative residual " + std::to_string(out.report.relative_residual) + ")");
    }
    const int m = n - 1;
    out.u.assign(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1), 0.0);
    for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= m; ++i) {
            out.u[static_cast<std::size_t>(j * (n + 1) + i)] = x((j - 1) * m + (i - 1));
        }
    }
    return out;
}

Q1Function solve_dirichlet_q1_2d(const Fn2& a, const Fn2& f, Interval1D ix, Interval1D iy, int n, double tol)
{
    return solve_dirichlet_q1_2d(
        [&a](double x, double y) -> std::array<double, 3> {
            const double v = a(x, y);
            return {v, 0.0, v};
        },
        f, ix, iy, n, tol);
}

ErrorReport error_norms(const Candidate1D& cand, const P1Function& ref, int q)
{
    const GaussLegendre gl = gauss_legendre(q);
    const double h = ref.mesh.h();
    double e0 = 0.0;
    double e1 = 0.0;
    double r0 = 0.0;
    double r1 = 0.0;
    for (int e = 0; e < ref.mesh.n_el; ++e) {
        const double x0 = ref.mesh.nodes[static_cast<std::size_t>(e)];
        const double u0 = ref.u[static_cast<std::size_t>(e)];
        const double u1 = ref.u[static_cast<std::size_t>(e) + 1];
        const double du = (u1 - u0) / h;
        for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
            const double t = 0.5 * (gl.nodes[k] + 1.0);
            const double w = 0.5 * gl.weights[k] * h;
            const double rv = (1.0 - t) * u0 + t * u1;
            const auto c = cand(x0 + t * h);
            e0 += w * (c[0] - rv) * (c[0] - rv);
            e1 += w * (c[1] - du) * (c[1] - du);
            r0 += w * rv * rv;
            r1 += w * du * du;
        }
    }
    ErrorReport rep;
    rep.l2_abs = std::sqrt(e0);
    rep.h1_abs = std::sqrt(e1);
    rep.ref_l2 = std::sqrt(r0);
    rep.ref_h1 = std::sqrt(r1);
    rep.l2_rel = rep.ref_l2 > 0 ? rep.l2_abs / rep.ref_l2 : rep.l2_abs;
    rep.h1_rel = rep.ref_h1 > 0 ? rep.h1_abs / rep.ref_h1 : rep.h1_abs;
    return rep;
}

ErrorReport error_norms(const Candidate2D& cand, const Q1Function& ref, int q)
{
    const GaussLegendre gl = gauss_legendre(q);
    const int n = ref.n;
    const double hx = ref.ix.length() / n;
    const double hy = ref.iy.length() / n;
    const auto at = [&](int i, int j) { return ref.u[static_cast<std::size_t>(j * (n + 1) + i)]; };
    double e0 = 0.0;
    double e1 = 0.0;
    double r0 = 0.0;
    double r1 = 0.0;
    for (int ey = 0; ey < n; ++ey) {
        for (int ex = 0; ex < n; ++ex) {
            const double u00 = at(ex, ey);
            const double u10 = at(ex + 1, ey);
            const double u01 = at(ex, ey + 1);
            const double u11 = at(ex + 1, ey + 1);
            for (std::size_t a = 0; a < gl.nodes.size(); ++a) {
                const double s = 0.5 * (gl.nodes[a] + 1.0);
                for (std::size_t b = 0; b < gl.nodes.size(); ++b) {
                    const double t = 0.5 * (gl.nodes[b] + 1.0);
                    const double w = 0.25 * gl.weights[a] * gl.weights[b] * hx * hy;
                    const double rv = (1 - s) * (1 - t) * u00 + s * (1 - t) * u10 + (1 - s) * t * u01 + s * t * u11;
                    const double gx = ((1 - t) * (u10 - u00) + t * (u11 - u01)) / hx;
                    const double gy = ((1 - s) * (u01 - u00) + s * (u11 - u10)) / hy;
                    const auto c = cand(ref.ix.lo + (ex + s) * hx, ref.iy.lo + (ey + t) * hy);
                    e0 += w * (c[0] - rv) * (c[0] - rv);
                    e1 += w * ((c[1] - gx) * (c[1] - gx) + (c[2] - gy) * (c[2] - gy));
                    r0 += w * rv * rv;
                    r1 += w * (gx * gx + gy * gy);
                }
            }
        }
    }
    ErrorReport rep;
    rep.l2_abs = std::sqrt(e0);
    rep.h1_abs = std::sqrt(e1);
    rep.ref_l2 = std::sqrt(r0);
    rep.ref_h1 = std::sqrt(r1);
    rep.l2_rel = rep.ref_l2 > 0 ? rep.l2_abs / rep.ref_l2 : rep.l2_abs;
    rep.h1_rel = rep.ref_h1 > 0 ? rep.h1_abs / rep.ref_h1 : rep.h1_abs;
    return rep;
}

int mesh_1d_for(double eps, int K)
{
    if (!(eps > 0.0 && eps < 1.0)) {
        throw UsageError("mesh_1d_for: eps must lie in (0, 1)");
    }
    return static_cast<int>(std::ceil(1024.0 / std::pow(eps, K) - 1e-9));
}

int mesh_2d_for(double eps)
{
    if (!(eps > 0.0 && eps < 1.0)) {
        throw UsageError("mesh_2d_for: eps must lie in (0, 1)");
    }
    return std::min(kMaxQ1Mesh, std::max(256, static_cast<int>(std::ceil(32.0 / eps - 1e-9))));
}

double oscillating_entry(const TensorCoefficient& c, double eps, std::span<const double> x, int i, int j)
{
    const int d = c.d;
    std::vector<double> pt(static_cast<std::size_t>((c.K + 1) * d));
    for (int a = 0; a < d; ++a) {
        const double xa = x[static_cast<std::size_t>(a)];
        pt[static_cast<std::size_t>(a)] = xa;
        double scale = 1.0;
        for (int g = 1; g <= c.K; ++g) {
            scale /= eps;
            const double y = xa * scale;
            pt[static_cast<std::size_t>(g * d + a)] = y - std::floor(y);
        }
    }
    return c.entry(i, j).value(pt);
}

void save_reference(const std::string& path, const std::string& key, const std::vector<std::uint64_t>& shape,
                    const std::vector<double>& values)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ReferenceError("cannot write reference cache '" + path + "'");
    }
    auto put = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    os.write("TNHFEM01", 8);
    put(key.size());
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    put(shape.size());
    for (auto s : shape) {
        put(s);
    }
    put(values.size());
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!os) {
        throw ReferenceError("failed writing reference cache '" + path + "'");
    }
}

std::optional<std::pair<std::vector<std::uint64_t>, std::vector<double>>> load_reference(const std::string& path,
                                                                                        const std::string& key)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        return std::nullopt;
    }
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "TNHFEM01", 8) != 0) {
        return std::nullopt;
    }
    auto get = [&]() {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    };
    const auto klen = get();
    if (!is || klen > (1u << 20)) {
        return std::nullopt;
    }
    std::string k(klen, '\0');
    is.read(k.data(), static_cast<std::streamsize>(klen));
    if (!is || k != key) {
        return std::nullopt;
    }
    const auto rank = get();
    if (!is || rank > 8) {
        return std::nullopt;
    }
    std::vector<std::uint64_t> shape(rank);
    std::uint64_t expect = 1;
    for (auto& s : shape) {
        s = get();
        expect *= s;
    }
    const auto count = get();
    if (!is || count != expect) {
        return std::nullopt;
    }
    std::vector<double> values(count);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) {
        return std::nullopt;
    }
    return std::make_pair(std::move(shape), std::move(values));
}

}  // namespace tenshom
