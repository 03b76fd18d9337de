#include "tenshom/error.hpp"
#include "tenshom/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace tenshom;

namespace {

double rosenbrock(std::span<const double> t, std::span<double> g)
{
    const double a = 1.0 - t[0];
    const double b = t[1] - t[0] * t[0];
    g[0] = -2.0 * a - 400.0 * t[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
}

double quadratic(std::span<const double> t, std::span<double> g)
{
    double v = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double s = static_cast<double>(i + 1);
        g[i] = 2.0 * s * (t[i] - 1.0);
        v += s * (t[i] - 1.0) * (t[i] - 1.0);
    }
    return v;
}

}  // namespace

TEST(Adam, MinimisesQuadratic)
{
    TrainConfig cfg;
    cfg.steps_adam = 2000;
    cfg.lr_adam = 0.05;
    const auto res = minimize(quadratic, std::vector<double>(5, 0.0), cfg);
    for (double v : res.best) {
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
    EXPECT_LE(res.best_value, 1e-6);
}

TEST(Lbfgs, SolvesRosenbrockAfterAdam)
{
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Optimizer::adam_then_lbfgs;
    cfg.steps_adam = 100;
    cfg.steps_lbfgs = 500;
    cfg.lr_lbfgs = 1.0;
    const auto res = minimize(rosenbrock, {-1.2, 1.0}, cfg);
    EXPECT_NEAR(res.best[0], 1.0, 1e-6);
    EXPECT_NEAR(res.best[1], 1.0, 1e-6);
    EXPECT_GT(res.lbfgs_iterations, 0);
}

TEST(Optim, BestSeenIsReturned)
{
    TrainConfig cfg;
    cfg.steps_adam = 300;
    cfg.lr_adam = 0.5;  // oscillates; the best iterate must not be the last one by accident
    const auto res = minimize(quadratic, std::vector<double>(3, 4.0), cfg);
    std::vector<double> g(3);
    EXPECT_DOUBLE_EQ(quadratic(res.best, g), res.best_value);
    EXPECT_LE(res.best_value, res.final_value);
}

TEST(Optim, NonFiniteLossRaisesTrainingError)
{
    TrainConfig cfg;
    cfg.steps_adam = 20;
    int calls = 0;
    const Objective f = [&](std::span<const double> t, std::span<double> g) {
        g[0] = 1.0;
        return ++calls > 5 ? std::numeric_limits<double>::quiet_NaN() : t[0];
    };
    try {
        (void)minimize(f, {0.0}, cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.last_good().size(), 1u);
    }
}

TEST(Optim, DeterministicHistory)
{
    TrainConfig cfg;
    cfg.steps_adam = 120;
    cfg.log_every = 25;
    const auto a = minimize(rosenbrock, {-1.2, 1.0}, cfg, true);
    const auto b = minimize(rosenbrock, {-1.2, 1.0}, cfg, true);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].step, b.history[i].step);
        EXPECT_EQ(a.history[i].loss, b.history[i].loss);
        EXPECT_EQ(a.history[i].wall_ms, 0.0);
    }
    EXPECT_EQ(a.best, b.best);
    EXPECT_EQ(a.history.back().step, 120);
    EXPECT_NEAR(a.history.front().loss, std::sqrt(24.2), 1e-12);
}

TEST(Optim, ObserverSeesLoggedSteps)
{
    TrainConfig cfg;
    cfg.steps_adam = 50;
    cfg.log_every = 10;
    std::vector<int> steps;
    (void)minimize(quadratic, {0.0, 0.0}, cfg, true, [&](int s, std::span<const double>) { steps.push_back(s); });
    ASSERT_FALSE(steps.empty());
    EXPECT_EQ(steps.front(), 0);
    EXPECT_EQ(steps.back(), 50);
}

TEST(TrainConfig, Validation)
{
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.lr_adam = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.widths = {};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.frequencies = {1, 2};
    cfg.widths = {5};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.frequencies = {3};
    EXPECT_EQ(cfg.resolved_frequencies(), (std::vector<int>{3, 3, 3, 3, 3}));
    EXPECT_EQ(loss_route_from_string(to_string(LossRoute::dense)), LossRoute::dense);
    EXPECT_THROW((void)loss_route_from_string("fast"), ConfigError);
}

TEST(LossCsv, Header)
{
    std::ostringstream os;
    write_loss_csv(os, {{0, 1.5, 2.0, 0.0}, {10, 0.5, 1.0, 3.0}});
    const std::string s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "step,loss,grad_norm,wall_ms");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}
