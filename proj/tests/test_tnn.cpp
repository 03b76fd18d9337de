#include "support.hpp"

#include "tenshom/error.hpp"
#include "tenshom/tnn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace tenshom;
using namespace tenshom::testing;

namespace {

constexpr double kPi = std::numbers::pi;

TensorGrid grid_xy(int n_sub = 4, int n_pts = 6, double slow_hi = kPi)
{
    return TensorGrid(1, 1, {build_gauss_rule({0.0, slow_hi}, n_sub, n_pts), build_gauss_rule({0.0, 1.0}, n_sub, n_pts)});
}

std::vector<SubnetworkSpec> specs_xy(std::vector<int> hidden = {6, 5})
{
    SubnetworkSpec slow;
    slow.hidden = hidden;
    SubnetworkSpec fast = slow;
    fast.periodic = true;
    return {slow, fast};
}

Subnetwork sine_subnet()
{
    SubnetworkSpec s;
    s.hidden = {1};
    s.periodic = true;
    Subnetwork net;
    net.spec = s;
    net.weights = {Mat::Constant(1, 1, 2.0 * kPi), Mat::Ones(1, 1)};
    net.biases = {Vec::Zero(1), Vec::Zero(1)};
    return net;
}

}  // namespace

TEST(Tnn, InitIsDeterministic)
{
    auto a = init_model({0, 1}, specs_xy(), 4, 17);
    auto b = init_model({0, 1}, specs_xy(), 4, 17);
    auto c = init_model({0, 1}, specs_xy(), 4, 18);
    EXPECT_EQ(get_params(a), get_params(b));
    EXPECT_NE(get_params(a), get_params(c));
    EXPECT_DOUBLE_EQ(a.c(0), 0.5);
}

TEST(Tnn, SmokeEvaluation)
{
    SubnetworkSpec s;
    auto m = init_model({0}, {s}, 1, 3);
    TensorGrid g(1, 0, {build_gauss_rule({0.0, 1.0}, 2, 4)});
    PointTnn pt(m, g);
    const double x = 0.5;
    EXPECT_TRUE(std::isfinite(pt.value(std::span<const double>(&x, 1))));
}

TEST(Tnn, InitStatistics)
{
    SubnetworkSpec s;
    s.hidden = {100, 100};
    auto m = init_model({0}, {s}, 1, 5);
    const Mat& w = m.subnets[0].weights[1];
    ASSERT_EQ(w.size(), 10000);
    const double bound = 1.0 / std::sqrt(100.0);
    const double sigma = bound / std::sqrt(3.0) / std::sqrt(10000.0);
    EXPECT_LT(std::abs(w.mean()), 3.0 * sigma);
    EXPECT_LE(w.cwiseAbs().maxCoeff(), bound);
    const Vec b0 = init_model({0}, {specs_xy({8, 4})[0]}, 2, 1).subnets[0].biases[0];
    EXPECT_LE(b0.cwiseAbs().maxCoeff(), 1.0);
    const Vec bp = init_model({0, 1}, specs_xy({8, 4}), 2, 1).subnets[1].biases[0];
    EXPECT_GE(bp.minCoeff(), 0.0);
    EXPECT_LT(bp.maxCoeff(), 2.0 * kPi);
}

TEST(Tnn, SingleSineChannels)
{
    const auto net = sine_subnet();
    const std::vector<double> x{0.0, 1.0};
    const auto ch = subnet_channels(net, x, 2);
    EXPECT_NEAR(ch[1](0, 0), 2.0 * kPi, 1e-12);
    EXPECT_NEAR(ch[2](0, 0), 0.0, 1e-12);
    EXPECT_NEAR(ch[0](0, 0), ch[0](0, 1), 1e-15);

    ad::Tape t;
    std::vector<ad::Var> w{t.constant(net.weights[0]), t.leaf(net.weights[1])};
    std::vector<ad::Var> b{t.leaf(net.biases[0]), t.leaf(net.biases[1])};
    Vec xv(1);
    xv << 0.0;
    const auto tc = forward_channels(t, net, w, b, xv, 2);
    EXPECT_NEAR(tc[1].value()(0, 0), 2.0 * kPi, 1e-12);
    EXPECT_NEAR(tc[2].value()(0, 0), 0.0, 1e-12);
}

TEST(Tnn, ChannelsMatchFiniteDifferences)
{
    for (bool periodic : {false, true}) {
        SubnetworkSpec s;
        s.hidden = {20, 20};
        s.periodic = periodic;
        auto m = init_model({0}, {s}, 2, periodic ? 7 : 8);
        const auto& net = m.subnets[0];
        const double h = 1e-4;
        for (double x : {0.13, 0.5, 0.91}) {
            // Richardson-extrapolated central differences (steps h and h/2):
            // the high first-layer frequencies make plain O(h^2) differences too coarse.
            const std::vector<double> pts{x - h, x, x + h, x - h / 2, x + h / 2};
            const auto ch = subnet_channels(net, pts, 2);
            for (int r = 0; r < 2; ++r) {
                const double d1h = (ch[0](r, 2) - ch[0](r, 0)) / (2.0 * h);
                const double d1h2 = (ch[0](r, 4) - ch[0](r, 3)) / h;
                const double d2h = (ch[0](r, 2) - 2.0 * ch[0](r, 1) + ch[0](r, 0)) / (h * h);
                const double d2h2 = (ch[0](r, 4) - 2.0 * ch[0](r, 1) + ch[0](r, 3)) / (h * h / 4);
                const double fd1 = (4.0 * d1h2 - d1h) / 3.0;
                const double fd2 = (4.0 * d2h2 - d2h) / 3.0;
                EXPECT_NEAR(ch[1](r, 1), fd1, 1e-6 * (1.0 + std::abs(fd1)));
                EXPECT_NEAR(ch[2](r, 1), fd2, 1e-6 * (1.0 + std::abs(fd2)));
            }
            // taped and plain channels agree
            ad::Tape t;
            auto lv = make_leaves(m, t);
            Vec xv(5);
            xv << pts[0], pts[1], pts[2], pts[3], pts[4];
            const auto tc = forward_channels(t, net, lv.w[0], lv.b[0], xv, 2);
            for (int c = 0; c < 3; ++c) {
                EXPECT_LT((tc[static_cast<std::size_t>(c)].value() - ch[static_cast<std::size_t>(c)]).cwiseAbs().maxCoeff(), 1e-12);
            }
        }
    }
}

TEST(Tnn, NormalisedFactorsAndPeriodicity)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 5, 21);
    const auto f = eval_factor_tables(m, g, 2);
    for (std::size_t k = 0; k < 2; ++k) {
        const Vec w = detail::weights_vec(g, f.dims[k]);
        const Vec n2 = f.factors[k].values.array().square().matrix() * w;
        for (Eigen::Index r = 0; r < n2.size(); ++r) {
            EXPECT_NEAR(std::sqrt(n2(r)), 1.0, 1e-12);
        }
    }
    const std::vector<double> ends{0.0, 1.0};
    const auto ch = subnet_channels(m.subnets[1], ends, 1);
    for (Eigen::Index r = 0; r < 5; ++r) {
        EXPECT_NEAR(ch[0](r, 0), ch[0](r, 1), 1e-13);
        EXPECT_NEAR(ch[1](r, 0), ch[1](r, 1), 1e-12);
    }
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 100; ++i) {
        const double y = u(rng);
        const std::vector<double> pts{y, y + 1.0};
        const auto c2 = subnet_channels(m.subnets[1], pts, 0);
        for (Eigen::Index r = 0; r < 5; ++r) {
            EXPECT_LE(std::abs(c2[0](r, 0) - c2[0](r, 1)), 1e-13 * (1.0 + std::abs(c2[0](r, 0))));
        }
    }
}

TEST(Tnn, ScalingInvariance)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 3, 2);
    const auto f = eval_factor_tables(m, g, 1);
    auto m2 = m;
    for (auto& net : m2.subnets) {
        net.weights.back() *= 3.7;
        net.biases.back() *= 3.7;
    }
    const auto f2 = eval_factor_tables(m2, g, 1);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_LT((f.factors[k].values - f2.factors[k].values).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((*f.factors[k].d1 - *f2.factors[k].d1).cwiseAbs().maxCoeff(), 1e-11);
    }
}

TEST(Tnn, DegenerateFactorIsReported)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 2, 2);
    m.subnets[0].weights.back().setZero();
    m.subnets[0].biases.back().setZero();
    EXPECT_THROW((void)eval_factor_tables(m, g, 0), DegenerateFactorError);
}

TEST(Tnn, MeanZeroWrapper)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 4, 9);
    const auto psi = eval_factor_tables(m, g, 2);
    const auto hat = apply_mean_zero(psi, {1});
    EXPECT_EQ(hat.rank(), 8);
    const double norm = std::sqrt(l2_inner(psi, psi));
    const auto integral = partial_integrate(hat, {1});
    for (double v : dense_eval_oracle(integral)) {
        EXPECT_LE(std::abs(v), 1e-12 * norm);
    }
    auto dh = derivative(hat, 1);
    auto dp = derivative(psi, 1);
    EXPECT_EQ(dh.rank(), dp.rank());
    EXPECT_EQ(dense_eval_oracle(dh), dense_eval_oracle(dp));
    auto ddh = derivative(dh, 1);
    auto ddp = derivative(dp, 1);
    EXPECT_EQ(dense_eval_oracle(ddh), dense_eval_oracle(ddp));

    const auto twice = apply_mean_zero(hat, {1});
    const auto a = dense_eval_oracle(hat);
    const auto b = dense_eval_oracle(twice);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-13);
    }
}

TEST(Tnn, DirichletMask)
{
    TensorGrid g(1, 0, {build_gauss_rule({0.0, kPi}, 8, 6)});
    DirichletMask mask{{0}, {{0.0, kPi}}};
    auto one = separable_ones(g, {0}, Mat());
    auto masked = apply_dirichlet_mask(one, mask);
    const auto& x = g.rule(0).nodes();
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(masked.factors[0].values(0, static_cast<Eigen::Index>(i)), std::sin(x[i]), 1e-15);
        EXPECT_NEAR((*masked.factors[0].d1)(0, static_cast<Eigen::Index>(i)), std::cos(x[i]), 1e-14);
        EXPECT_NEAR((*masked.factors[0].d2)(0, static_cast<Eigen::Index>(i)), -std::sin(x[i]), 1e-14);
    }
    EXPECT_EQ(mask.eval(0, 0.0)[0], 0.0);
    EXPECT_EQ(mask.eval(0, kPi)[0], 0.0);

    SubnetworkSpec s;
    auto m = init_model({0}, {s}, 3, 4);
    PointTnn pt(m, g, {}, mask);
    for (double xb : {0.0, kPi}) {
        const auto e = pt.eval(std::span<const double>(&xb, 1));
        EXPECT_LE(std::abs(e.value), 1e-14);
        EXPECT_TRUE(std::isfinite(e.grad(0)));
    }
    const double h = 1e-5;
    for (double xv : {0.3, 1.7, 2.9}) {
        const double xp = xv + h;
        const double xm = xv - h;
        const auto e = pt.eval(std::span<const double>(&xv, 1), true);
        const double fd = (pt.value(std::span<const double>(&xp, 1)) - pt.value(std::span<const double>(&xm, 1))) / (2 * h);
        EXPECT_NEAR(e.grad(0), fd, 1e-6 * (1.0 + std::abs(fd)));
    }
    const double out = 4.0;
    EXPECT_THROW((void)pt.value(std::span<const double>(&out, 1)), UsageError);
}

TEST(Tnn, PointEvaluatorMatchesTables)
{
    const auto g = grid_xy(3, 5);
    auto m = init_model({0, 1}, specs_xy(), 4, 31);
    const auto hat = apply_mean_zero(eval_factor_tables(m, g, 1), {1});
    PointTnn pt(m, g, {1});
    const auto dense = dense_eval_oracle(hat);
    const auto& x = g.rule(0).nodes();
    const auto& y = g.rule(1).nodes();
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
            const std::array<double, 2> pnt{x[i], y[j]};
            EXPECT_NEAR(pt.value(pnt), dense[i * y.size() + j], 1e-12);
        }
    }
    // derivatives by central differences (fast argument beyond [0,1] is fine)
    const double h = 1e-5;
    for (auto pnt : {std::array<double, 2>{0.4, 0.2}, std::array<double, 2>{2.2, 1.7}}) {
        const auto e = pt.eval(pnt, true);
        for (int k = 0; k < 2; ++k) {
            auto pp = pnt;
            auto pm = pnt;
            pp[static_cast<std::size_t>(k)] += h;
            pm[static_cast<std::size_t>(k)] -= h;
            const double fd = (pt.value(pp) - pt.value(pm)) / (2 * h);
            EXPECT_NEAR(e.grad(k), fd, 1e-6 * (1.0 + std::abs(fd)));
            const auto ep = pt.eval(pp);
            const auto em = pt.eval(pm);
            for (int l = 0; l < 2; ++l) {
                const double fdh = (ep.grad(l) - em.grad(l)) / (2 * h);
                EXPECT_NEAR(e.hess(k, l), fdh, 1e-5 * (1.0 + std::abs(fdh)));
            }
        }
    }
}

TEST(Tnn, GradientOfNormIsTwoC)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 1, 3);
    m.c(0) = 0.8;
    ad::Tape t;
    auto lv = make_leaves(m, t);
    auto psi = eval_factor_tables(m, lv, g, 0);
    auto loss = l2_norm_sq(psi);
    t.backward(loss);
    const auto grad = gather_gradient(t, m, lv);
    ASSERT_EQ(grad.size(), n_params(m));
    EXPECT_NEAR(grad[0], 1.6, 1e-12);
    for (std::size_t i = 1; i < grad.size(); ++i) {
        EXPECT_NEAR(grad[i], 0.0, 1e-10);
    }
}

TEST(Tnn, FrozenWeightsExcludedFromLayout)
{
    auto specs = specs_xy({6, 5});
    auto m = init_model({0, 1}, specs, 3, 3);
    // slow: 6 + 6 + 30 + 5 + 15 + 3; fast: 6 (phases) + 30 + 5 + 15 + 3; plus c
    EXPECT_EQ(n_params(m), 3u + 65u + 59u);
    auto theta = get_params(m);
    for (auto& v : theta) {
        v += 0.25;
    }
    set_params(m, theta);
    EXPECT_EQ(get_params(m), theta);
    EXPECT_NEAR(m.subnets[1].weights[0](2, 0), 2.0 * kPi * 3.0, 1e-15);
    EXPECT_THROW(set_params(m, std::vector<double>(3)), UsageError);
}

TEST(Tnn, CheckpointRoundTripIsBitwise)
{
    const auto g = grid_xy();
    auto m = init_model({0, 1}, specs_xy(), 4, 77);
    const std::string text = model_to_json(m).dump();
    const auto back = model_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(get_params(back), get_params(m));
    const auto a = dense_eval_oracle(eval_factor_tables(m, g, 0));
    const auto b = dense_eval_oracle(eval_factor_tables(back, g, 0));
    EXPECT_EQ(a, b);
    EXPECT_THROW((void)model_from_json(nlohmann::json::parse("{\"dims\":[0]}")), ConfigError);
}

TEST(Tnn, SpecValidation)
{
    SubnetworkSpec s;
    s.periodic = true;
    s.frequencies = {1, 2};
    EXPECT_THROW(s.validate(), ConfigError);
    s.hidden = {};
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW((void)init_model({0}, {SubnetworkSpec{}}, 0, 1), ConfigError);
}
