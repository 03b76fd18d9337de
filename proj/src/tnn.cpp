#include "tenshom/tnn.hpp"

#include "tenshom/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace tenshom {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double frac(double v)
{
    return v - std::floor(v);
}

}  // namespace

void SubnetworkSpec::validate() const
{
    if (hidden.empty()) {
        throw ConfigError("subnetwork: at least one hidden layer is required");
    }
    for (int h : hidden) {
        if (h < 1) {
            throw ConfigError("subnetwork: hidden widths must be >= 1");
        }
    }
    if (periodic && !frequencies.empty() && static_cast<int>(frequencies.size()) != hidden.front()) {
        throw ConfigError("subnetwork: frequency list length must equal the first hidden width");
    }
}

std::vector<int> SubnetworkSpec::resolved_frequencies() const
{
    if (!frequencies.empty()) {
        return frequencies;
    }
    std::vector<int> k;
    for (int i = 1; i <= hidden.front(); ++i) {
        k.push_back(i);
    }
    return k;
}

int TnnModel::position(int dim) const
{
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] == dim) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

TnnModel init_model(std::vector<int> dims, const std::vector<SubnetworkSpec>& specs, int p, std::uint64_t seed)
{
    if (p < 1) {
        throw ConfigError("init_model: rank p must be >= 1");
    }
    if (specs.size() != dims.size()) {
        throw ConfigError("init_model: one subnetwork spec per dimension is required");
    }
    for (std::size_t i = 1; i < dims.size(); ++i) {
        if (dims[i] <= dims[i - 1]) {
            throw ConfigError("init_model: dimensions must be strictly ascending");
        }
    }
    TnnModel m;
    m.dims = std::move(dims);
    m.p = p;
    m.seed = seed;
    m.c = Vec::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));
    std::mt19937_64 rng(seed);
    for (const auto& spec : specs) {
        spec.validate();
        Subnetwork net;
        net.spec = spec;
        std::vector<int> widths{1};
        widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
        widths.push_back(p);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const int fan_in = widths[l];
            const int out = widths[l + 1];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            Mat w(out, fan_in);
            Vec b(out);
            if (spec.periodic && l == 0) {
                const auto k = spec.resolved_frequencies();
                std::uniform_real_distribution<double> phase(0.0, kTwoPi);
                for (int r = 0; r < out; ++r) {
                    w(r, 0) = kTwoPi * k[static_cast<std::size_t>(r)];
                    b(r) = phase(rng);
                }
            } else {
                for (Eigen::Index i = 0; i < w.size(); ++i) {
                    w.data()[i] = u(rng);
                }
                for (Eigen::Index i = 0; i < b.size(); ++i) {
                    b(i) = u(rng);
                }
            }
            net.weights.push_back(std::move(w));
            net.biases.push_back(std::move(b));
        }
        m.subnets.push_back(std::move(net));
    }
    return m;
}

std::size_t n_params(const TnnModel& m)
{
    std::size_t n = static_cast<std::size_t>(m.c.size());
    for (const auto& net : m.subnets) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            if (!net.frozen_weight(l)) {
                n += static_cast<std::size_t>(net.weights[l].size());
            }
            n += static_cast<std::size_t>(net.biases[l].size());
        }
    }
    return n;
}

std::vector<double> get_params(const TnnModel& m)
{
    std::vector<double> theta;
    theta.reserve(n_params(m));
    theta.insert(theta.end(), m.c.data(), m.c.data() + m.c.size());
    for (const auto& net : m.subnets) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            if (!net.frozen_weight(l)) {
                theta.insert(theta.end(), net.weights[l].data(), net.weights[l].data() + net.weights[l].size());
            }
            theta.insert(theta.end(), net.biases[l].data(), net.biases[l].data() + net.biases[l].size());
        }
    }
    return theta;
}

void set_params(TnnModel& m, std::span<const double> theta)
{
    if (theta.size() != n_params(m)) {
        throw UsageError("set_params: expected " + std::to_string(n_params(m)) + " parameters, got " +
                         std::to_string(theta.size()));
    }
    std::size_t off = 0;
    auto take = [&](double* dst, Eigen::Index n) {
        std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), n, dst);
        off += static_cast<std::size_t>(n);
    };
    take(m.c.data(), m.c.size());
    for (auto& net : m.subnets) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            if (!net.frozen_weight(l)) {
                take(net.weights[l].data(), net.weights[l].size());
            }
            take(net.biases[l].data(), net.biases[l].size());
        }
    }
}

TnnLeaves make_leaves(const TnnModel& m, ad::Tape& tape, bool trainable)
{
    auto mk = [&](Mat v) { return trainable ? tape.leaf(std::move(v)) : tape.constant(std::move(v)); };
    TnnLeaves lv;
    lv.c = mk(m.c);
    for (const auto& net : m.subnets) {
        std::vector<ad::Var> w;
        std::vector<ad::Var> b;
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            w.push_back(net.frozen_weight(l) ? tape.constant(net.weights[l]) : mk(net.weights[l]));
            b.push_back(mk(net.biases[l]));
        }
        lv.w.push_back(std::move(w));
        lv.b.push_back(std::move(b));
    }
    return lv;
}

std::vector<double> gather_gradient(const ad::Tape& tape, const TnnModel& m, const TnnLeaves& lv)
{
    std::vector<double> g;
    g.reserve(n_params(m));
    auto put = [&](ad::Var v) {
        const Mat gm = tape.grad(v);
        g.insert(g.end(), gm.data(), gm.data() + gm.size());
    };
    put(lv.c);
    for (std::size_t s = 0; s < m.subnets.size(); ++s) {
        for (std::size_t l = 0; l < m.subnets[s].weights.size(); ++l) {
            if (!m.subnets[s].frozen_weight(l)) {
                put(lv.w[s][l]);
            }
            put(lv.b[s][l]);
        }
    }
    return g;
}

std::array<ad::Var, 3> forward_channels(ad::Tape& tape, const Subnetwork& net, const std::vector<ad::Var>& w,
                                        const std::vector<ad::Var>& b, const Vec& x, int order)
{
    if (order < 0 || order > 2) {
        throw UsageError("forward_channels: order must be 0, 1 or 2");
    }
    const auto n = x.size();
    const std::size_t n_layers = net.weights.size();
    ad::Var z;
    ad::Var dz;
    ad::Var ddz;
    if (net.spec.periodic) {
        const Mat& k = net.weights[0];
        Mat phase(k.rows(), n);
        for (Eigen::Index r = 0; r < k.rows(); ++r) {
            const double kr = k(r, 0) / kTwoPi;
            for (Eigen::Index i = 0; i < n; ++i) {
                phase(r, i) = kTwoPi * frac(kr * x(i));
            }
        }
        z = ad::add_colvec(tape.constant(std::move(phase)), b[0]);
        if (order >= 1) {
            dz = tape.constant(k * RowVec::Ones(n));
        }
    } else {
        z = ad::add_colvec(ad::matmul(w[0], tape.constant(x.transpose())), b[0]);
        if (order >= 1) {
            dz = ad::matmul(w[0], tape.constant(Mat::Ones(1, n)));
        }
    }
    // ddz of the first layer is zero; it enters through the activation only.
    bool ddz_zero = true;
    for (std::size_t l = 0;; ++l) {
        ad::Var s = ad::sin(z);
        ad::Var ds;
        ad::Var dds;
        if (order >= 1) {
            ad::Var cz = ad::cos(z);
            ds = ad::mul(cz, dz);
            if (order >= 2) {
                dds = ad::scale(ad::mul(s, ad::square(dz)), -1.0);
                if (!ddz_zero) {
                    dds = ad::add(dds, ad::mul(cz, ddz));
                }
            }
        }
        const std::size_t next = l + 1;
        z = ad::add_colvec(ad::matmul(w[next], s), b[next]);
        if (order >= 1) {
            dz = ad::matmul(w[next], ds);
        }
        if (order >= 2) {
            ddz = ad::matmul(w[next], dds);
            ddz_zero = false;
        }
        if (next + 1 == n_layers) {
            break;
        }
    }
    return {z, dz, ddz};
}

std::array<Mat, 3> subnet_channels(const Subnetwork& net, std::span<const double> x, int order)
{
    const auto n = static_cast<Eigen::Index>(x.size());
    Mat z;
    Mat dz;
    Mat ddz;
    const Mat& w0 = net.weights[0];
    if (net.spec.periodic) {
        z.resize(w0.rows(), n);
        for (Eigen::Index r = 0; r < w0.rows(); ++r) {
            const double kr = w0(r, 0) / kTwoPi;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double y = frac(x[static_cast<std::size_t>(i)]);
                z(r, i) = kTwoPi * frac(kr * y);
            }
        }
    } else {
        const Eigen::Map<const RowVec> xr(x.data(), n);
        z = w0 * xr;
    }
    z.colwise() += net.biases[0];
    dz = w0 * RowVec::Ones(n);
    ddz = Mat::Zero(w0.rows(), n);
    for (std::size_t l = 1; l < net.weights.size(); ++l) {
        const Mat s = z.array().sin().matrix();
        const Mat cz = z.array().cos().matrix();
        const Mat ds = cz.cwiseProduct(dz);
        const Mat dds = (-s.array() * dz.array().square() + cz.array() * ddz.array()).matrix();
        z = net.weights[l] * s;
        z.colwise() += net.biases[l];
        dz = net.weights[l] * ds;
        ddz = net.weights[l] * dds;
    }
    if (order < 2) {
        ddz.resize(0, 0);
    }
    if (order < 1) {
        dz.resize(0, 0);
    }
    return {z, dz, ddz};
}

TapedSeparable eval_factor_tables(const TnnModel& m, const TnnLeaves& lv, const TensorGrid& grid, int order)
{
    ad::Tape& tape = *lv.c.tape;
    TapedSeparable out;
    out.grid = &grid;
    out.dims = m.dims;
    out.coeffs = lv.c;
    for (std::size_t k = 0; k < m.dims.size(); ++k) {
        const int dim = m.dims[k];
        const Vec x = detail::nodes_vec(grid, dim);
        const Vec w = detail::weights_vec(grid, dim);
        const auto ch = forward_channels(tape, m.subnets[k], lv.w[k], lv.b[k], x, order);
        ad::Var norm = ad::sqrt(ad::weighted_row_sums(ad::square(ch[0]), w));
        const double smallest = norm.value().minCoeff();
        if (!(smallest >= kDegenerateNorm)) {
            throw DegenerateFactorError("TNN factor on dimension " + grid.label(dim).name() + " has L2 norm " +
                                            std::to_string(smallest) + "; restart with a different seed",
                                        get_params(m));
        }
        ad::Var inv = ad::reciprocal(norm);
        Factor<ad::Var> fac{ad::row_scale(ch[0], inv), std::nullopt, std::nullopt};
        if (order >= 1) {
            fac.d1 = ad::row_scale(ch[1], inv);
        }
        if (order >= 2) {
            fac.d2 = ad::row_scale(ch[2], inv);
        }
        out.factors.push_back(std::move(fac));
        out.flat.emplace_back(static_cast<std::size_t>(m.p), 0);
    }
    return out;
}

Separable eval_factor_tables(const TnnModel& m, const TensorGrid& grid, int order)
{
    ad::Tape tape;
    const TnnLeaves lv = make_leaves(m, tape, false);
    return freeze(eval_factor_tables(m, lv, grid, order));
}

std::array<double, 3> DirichletMask::eval(std::size_t k, double x) const
{
    const Interval1D& iv = intervals.at(k);
    const double len = iv.length();
    const double t = (x - iv.lo) / len;
    const double pi = std::numbers::pi;
    const double g = std::sin(pi * std::min(t, 1.0 - t));
    return {g, pi / len * std::cos(pi * t), -(pi * pi) / (len * len) * std::sin(pi * t)};
}

PointTnn::PointTnn(TnnModel model, const TensorGrid& grid, std::vector<int> mean_zero_dims,
                   std::optional<DirichletMask> mask)
    : model_(std::move(model)), mean_zero_dims_(std::move(mean_zero_dims)), mask_(std::move(mask))
{
    const std::size_t nd = model_.dims.size();
    is_mean_zero_.assign(nd, 0);
    mask_pos_.assign(nd, -1);
    means_.resize(nd);
    for (int d : mean_zero_dims_) {
        const int p = model_.position(d);
        if (p < 0) {
            throw UsageError("PointTnn: mean-zero dimension not spanned by the model");
        }
        is_mean_zero_[static_cast<std::size_t>(p)] = 1;
    }
    if (mask_) {
        for (std::size_t k = 0; k < mask_->dims.size(); ++k) {
            const int p = model_.position(mask_->dims[k]);
            if (p < 0) {
                throw UsageError("PointTnn: mask dimension not spanned by the model");
            }
            mask_pos_[static_cast<std::size_t>(p)] = static_cast<int>(k);
        }
    }
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& rule = grid.rule(model_.dims[k]);
        const auto ch = subnet_channels(model_.subnets[k], rule.nodes(), 0);
        const Vec w = detail::weights_vec(grid, model_.dims[k]);
        Vec nrm = (ch[0].array().square().matrix() * w).array().sqrt().matrix();
        norms_.push_back(nrm);
        if (is_mean_zero_[k]) {
            means_[k] = (ch[0] * w).cwiseQuotient(nrm);
        }
    }
}

PointTnn::Eval PointTnn::eval(std::span<const double> point, bool hessian) const
{
    const std::size_t nd = model_.dims.size();
    if (point.size() != nd) {
        throw UsageError("PointTnn::eval: expected one coordinate per model dimension");
    }
    const int p = model_.p;
    // Per dimension: normalised (and masked) factor value and derivatives, p entries each.
    std::vector<Vec> v(nd);
    std::vector<Vec> dv(nd);
    std::vector<Vec> ddv(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        const double xk = point[k];
        if (mask_pos_[k] >= 0 && !mask_->intervals[static_cast<std::size_t>(mask_pos_[k])].contains(xk)) {
            throw UsageError("PointTnn::eval: point outside the masked domain");
        }
        const auto ch = subnet_channels(model_.subnets[k], std::span<const double>(&xk, 1), 2);
        Vec a = ch[0].col(0).cwiseQuotient(norms_[k]);
        Vec da = ch[1].col(0).cwiseQuotient(norms_[k]);
        Vec dda = ch[2].col(0).cwiseQuotient(norms_[k]);
        if (mask_pos_[k] >= 0) {
            const auto g = mask_->eval(static_cast<std::size_t>(mask_pos_[k]), xk);
            const Vec a0 = a;
            const Vec da0 = da;
            a = a0 * g[0];
            da = da0 * g[0] + a0 * g[1];
            dda = dda * g[0] + 2.0 * da0 * g[1] + a0 * g[2];
        }
        v[k] = a;
        dv[k] = da;
        ddv[k] = dda;
    }
    Eval e;
    e.grad = Vec::Zero(static_cast<Eigen::Index>(nd));
    if (hessian) {
        e.hess = Mat::Zero(static_cast<Eigen::Index>(nd), static_cast<Eigen::Index>(nd));
    }
    const bool has_mean = std::any_of(is_mean_zero_.begin(), is_mean_zero_.end(), [](auto b) { return b != 0; });
    const int n_passes = has_mean ? 2 : 1;
    for (int pass = 0; pass < n_passes; ++pass) {
        const double sign = pass == 0 ? 1.0 : -1.0;
        for (int j = 0; j < p; ++j) {
            std::vector<double> f(nd);
            std::vector<double> df(nd);
            std::vector<double> ddf(nd);
            for (std::size_t k = 0; k < nd; ++k) {
                if (pass == 1 && is_mean_zero_[k]) {
                    f[k] = means_[k](j);
                    df[k] = 0.0;
                    ddf[k] = 0.0;
                } else {
                    f[k] = v[k](j);
                    df[k] = dv[k](j);
                    ddf[k] = ddv[k](j);
                }
            }
            const double cj = sign * model_.c(j);
            double prod = cj;
            for (std::size_t k = 0; k < nd; ++k) {
                prod *= f[k];
            }
            e.value += prod;
            for (std::size_t a = 0; a < nd; ++a) {
                double g = cj * df[a];
                for (std::size_t k = 0; k < nd; ++k) {
                    if (k != a) {
                        g *= f[k];
                    }
                }
                e.grad(static_cast<Eigen::Index>(a)) += g;
                if (!hessian) {
                    continue;
                }
                for (std::size_t b = 0; b < nd; ++b) {
                    double h = cj * (a == b ? ddf[a] : df[a] * df[b]);
                    for (std::size_t k = 0; k < nd; ++k) {
                        if (k != a && k != b) {
                            h *= f[k];
                        }
                    }
                    e.hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += h;
                }
            }
        }
    }
    return e;
}

nlohmann::json subnet_spec_to_json(const SubnetworkSpec& s)
{
    return nlohmann::json{{"hidden", s.hidden}, {"periodic", s.periodic}, {"frequencies", s.frequencies}};
}

SubnetworkSpec subnet_spec_from_json(const nlohmann::json& j)
{
    SubnetworkSpec s;
    s.hidden = j.value("hidden", s.hidden);
    s.periodic = j.value("periodic", false);
    s.frequencies = j.value("frequencies", std::vector<int>{});
    s.validate();
    return s;
}

namespace {

nlohmann::json mat_json(const Mat& m)
{
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()},
                          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Mat mat_from(const nlohmann::json& j)
{
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw ConfigError("checkpoint: matrix data size does not match its shape");
    }
    return Eigen::Map<const Mat>(data.data(), rows, cols);
}

}  // namespace

nlohmann::json model_to_json(const TnnModel& m)
{
    nlohmann::json j;
    j["dims"] = m.dims;
    j["p"] = m.p;
    j["seed"] = m.seed;
    j["c"] = std::vector<double>(m.c.data(), m.c.data() + m.c.size());
    j["subnets"] = nlohmann::json::array();
    for (const auto& net : m.subnets) {
        nlohmann::json s;
        s["spec"] = subnet_spec_to_json(net.spec);
        s["weights"] = nlohmann::json::array();
        s["biases"] = nlohmann::json::array();
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            s["weights"].push_back(mat_json(net.weights[l]));
            s["biases"].push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
        }
        j["subnets"].push_back(std::move(s));
    }
    return j;
}

TnnModel model_from_json(const nlohmann::json& j)
{
    try {
        TnnModel m;
        m.dims = j.at("dims").get<std::vector<int>>();
        m.p = j.at("p").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto c = j.at("c").get<std::vector<double>>();
        m.c = Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
        for (const auto& s : j.at("subnets")) {
            Subnetwork net;
            net.spec = subnet_spec_from_json(s.at("spec"));
            for (const auto& w : s.at("weights")) {
                net.weights.push_back(mat_from(w));
            }
            for (const auto& b : s.at("biases")) {
                const auto bv = b.get<std::vector<double>>();
                net.biases.emplace_back(Eigen::Map<const Vec>(bv.data(), static_cast<Eigen::Index>(bv.size())));
            }
            if (net.weights.size() != net.biases.size() || net.weights.size() != net.spec.hidden.size() + 1 ||
                net.weights.back().rows() != m.p) {
                throw ConfigError("checkpoint: subnetwork layers do not match its spec");
            }
            m.subnets.push_back(std::move(net));
        }
        if (m.subnets.size() != m.dims.size() || m.c.size() != m.p) {
            throw ConfigError("checkpoint: inconsistent model sizes");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

}  // namespace tenshom
