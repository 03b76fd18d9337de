#include "tenshom/optim.hpp"

#include "tenshom/error.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

namespace tenshom {

std::string to_string(LossRoute r)
{
    switch (r) {
    case LossRoute::automatic:
        return "auto";
    case LossRoute::separable:
        return "separable";
    case LossRoute::dense:
        return "dense";
    }
    return "auto";
}

LossRoute loss_route_from_string(const std::string& s)
{
    if (s == "auto") {
        return LossRoute::automatic;
    }
    if (s == "separable") {
        return LossRoute::separable;
    }
    if (s == "dense") {
        return LossRoute::dense;
    }
    throw ConfigError("unknown loss route '" + s + "' (auto|separable|dense)");
}

void TrainConfig::validate() const
{
    if (!(lr_adam > 0.0) || !(lr_lbfgs > 0.0)) {
        throw ConfigError("train: learning rates must be > 0");
    }
    if (steps_adam < 0 || steps_lbfgs < 0) {
        throw ConfigError("train: step counts must be >= 0");
    }
    if (history < 1) {
        throw ConfigError("train: LBFGS history must be >= 1");
    }
    if (p < 1) {
        throw ConfigError("train: rank p must be >= 1");
    }
    if (widths.empty()) {
        throw ConfigError("train: at least one hidden width is required");
    }
    for (int w : widths) {
        if (w < 1) {
            throw ConfigError("train: hidden widths must be >= 1");
        }
    }
    if (log_every < 1) {
        throw ConfigError("train: log_every must be >= 1");
    }
    if (frequencies.size() > 1 && frequencies.size() != static_cast<std::size_t>(widths.front())) {
        throw ConfigError("train: frequency list must have one entry or one per first-layer neuron");
    }
    for (int k : frequencies) {
        if (k < 1) {
            throw ConfigError("train: frequencies must be positive integers");
        }
    }
}

std::vector<int> TrainConfig::resolved_frequencies() const
{
    if (frequencies.size() == 1) {
        return std::vector<int>(static_cast<std::size_t>(widths.front()), frequencies.front());
    }
    return frequencies;
}

namespace {

using EVec = Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

struct Tracker {
    const Objective& f;
    bool deterministic;
    Clock::time_point start = Clock::now();
    OptimResult res;

    double eval(const EVec& x, EVec& g)
    {
        g.resize(x.size());
        ++res.evaluations;
        const double v = f(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                           std::span<double>(g.data(), static_cast<std::size_t>(g.size())));
        if (std::isfinite(v) && g.allFinite() && (res.best.empty() || v < res.best_value)) {
            res.best.assign(x.data(), x.data() + x.size());
            res.best_value = v;
        }
        return v;
    }

    void log(int step, double v, const EVec& g)
    {
        const double ms =
            deterministic ? 0.0 : std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        res.history.push_back({step, std::sqrt(std::max(v, 0.0)), g.norm(), ms});
    }
};

}  // namespace

OptimResult minimize(const Objective& f, std::vector<double> theta0, const TrainConfig& cfg, bool deterministic,
                     const Observer& observer)
{
    cfg.validate();
    Tracker tr{f, deterministic, Clock::now(), {}};
    EVec x = Eigen::Map<const EVec>(theta0.data(), static_cast<Eigen::Index>(theta0.size()));
    EVec g;
    const auto n = x.size();
    auto notify = [&](int step) {
        if (observer) {
            observer(step, std::span<const double>(x.data(), static_cast<std::size_t>(n)));
        }
    };

    // Adam
    EVec m = EVec::Zero(n);
    EVec v = EVec::Zero(n);
    const double b1 = 0.9;
    const double b2 = 0.999;
    const double eps = 1e-8;
    double fx = 0.0;
    int step = 0;
    for (; step < cfg.steps_adam; ++step) {
        try {
            fx = tr.eval(x, g);
        } catch (const DegenerateFactorError& e) {
            throw DegenerateFactorError(std::string(e.what()) + " at Adam step " + std::to_string(step) +
                                            "; restart with a different seed or a smaller learning rate",
                                        tr.res.best);
        }
        if (!std::isfinite(fx) || !g.allFinite()) {
            throw TrainingError("non-finite loss or gradient at Adam step " + std::to_string(step), tr.res.best);
        }
        if (step % cfg.log_every == 0) {
            tr.log(step, fx, g);
            notify(step);
        }
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(b1, step + 1);
        const double c2 = 1.0 - std::pow(b2, step + 1);
        x.array() -= cfg.lr_adam * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }

    auto safe_eval = [&](const EVec& at, EVec& grad) {
        try {
            return tr.eval(at, grad);
        } catch (const DegenerateFactorError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    fx = safe_eval(x, g);
    if (!std::isfinite(fx) || !g.allFinite()) {
        if (cfg.lbfgs_steps() == 0 && !tr.res.best.empty()) {
            tr.res.final_value = fx;
            return tr.res;
        }
        throw TrainingError("non-finite loss after Adam phase", tr.res.best);
    }

    // L-BFGS
    std::deque<EVec> S;
    std::deque<EVec> Y;
    int fails = 0;
    const int lb = cfg.lbfgs_steps();
    for (int it = 0; it < lb; ++it, ++step) {
        if (step % cfg.log_every == 0) {
            tr.log(step, fx, g);
            notify(step);
        }
        if (g.norm() == 0.0) {
            break;
        }
        EVec d;
        if (S.empty()) {
            d = -g * std::min(1.0, 1.0 / g.lpNorm<1>());
        } else {
            EVec q = g;
            std::vector<double> alpha(S.size());
            for (std::size_t k = S.size(); k-- > 0;) {
                alpha[k] = S[k].dot(q) / Y[k].dot(S[k]);
                q -= alpha[k] * Y[k];
            }
            q *= S.back().dot(Y.back()) / Y.back().dot(Y.back());
            for (std::size_t k = 0; k < S.size(); ++k) {
                const double beta = Y[k].dot(q) / Y[k].dot(S[k]);
                q += (alpha[k] - beta) * S[k];
            }
            d = -q;
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            S.clear();
            Y.clear();
            d = -g * std::min(1.0, 1.0 / g.lpNorm<1>());
            slope = g.dot(d);
        }
        double t = cfg.lr_lbfgs;
        EVec xn;
        EVec gn;
        double fn = 0.0;
        bool ok = false;
        for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
            xn = x + t * d;
            fn = safe_eval(xn, gn);
            if (std::isfinite(fn) && gn.allFinite() && fn <= fx + 1e-4 * t * slope) {
                ok = true;
                break;
            }
        }
        ++tr.res.lbfgs_iterations;
        if (!ok) {
            S.clear();
            Y.clear();
            if (++fails >= 2) {
                tr.res.lbfgs_stalled = true;
                break;
            }
            continue;
        }
        fails = 0;
        EVec s = xn - x;
        EVec y = gn - g;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            if (static_cast<int>(S.size()) > cfg.history) {
                S.pop_front();
                Y.pop_front();
            }
        }
        x = std::move(xn);
        g = std::move(gn);
        fx = fn;
    }
    tr.log(step, fx, g);
    notify(step);
    tr.res.final_value = fx;
    return tr.res;
}

void write_loss_csv(std::ostream& os, const std::vector<TrainRecord>& history)
{
    os << "step,loss,grad_norm,wall_ms\n";
    os << std::setprecision(17);
    for (const auto& r : history) {
        os << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.wall_ms << '\n';
    }
}

void write_loss_csv(const std::string& path, const std::vector<TrainRecord>& history)
{
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write loss history to '" + path + "'");
    }
    write_loss_csv(os, history);
}

}  // namespace tenshom
