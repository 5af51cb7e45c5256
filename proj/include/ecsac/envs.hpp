#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/rng.hpp"

namespace ecsac {

struct EnvSpec {
    std::string name;
    std::size_t state_dim = 0;
    std::size_t action_dim = 0;
    std::vector<double> action_low;
    std::vector<double> action_high;
    std::size_t max_episode_steps = 200;
    double reward_min = 0.0;
    double reward_max = 0.0;
};

struct StepResult {
    std::vector<double> next_state;
    double reward = 0.0;
    bool done = false;
};

/// Deterministic toy continuous-control environment. Identical (seed, action
/// sequence) pairs produce bit-identical trajectories. Out-of-range actions
/// are clamped and counted rather than rejected.
class Env {
public:
    virtual ~Env() = default;

    const EnvSpec& spec() const { return spec_; }
    std::uint64_t clamp_count() const { return clamp_count_; }

    std::vector<double> reset(std::uint64_t seed) {
        Rng rng(seed);
        step_count_ = 0;
        finished_ = false;
        return do_reset(rng);
    }

    StepResult step(std::span<const double> action) {
        if (finished_) throw UsageError("Env::step: episode already finished; reset first");
        if (action.size() != spec_.action_dim)
            throw ConfigError("Env::step: action dimension mismatch");
        std::vector<double> a(action.begin(), action.end());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double clamped = std::clamp(a[i], spec_.action_low[i], spec_.action_high[i]);
            if (clamped != a[i]) ++clamp_count_;
            a[i] = clamped;
        }
        StepResult r = do_step(a);
        ++step_count_;
        if (step_count_ >= spec_.max_episode_steps) r.done = true;
        finished_ = r.done;
        return r;
    }

protected:
    virtual std::vector<double> do_reset(Rng& rng) = 0;
    virtual StepResult do_step(const std::vector<double>& action) = 0;

    EnvSpec spec_;
    std::size_t step_count_ = 0;
    bool finished_ = false;
    std::uint64_t clamp_count_ = 0;
};

/// Torque-limited swing-up. State (cos th, sin th, thdot), torque in [-2, 2],
/// cost-form reward -(th^2 + 0.1 thdot^2 + 0.001 a^2) with th = 0 upright.
/// Semi-implicit Euler at dt = 0.05.
class PendulumEnv final : public Env {
public:
    static constexpr double kG = 10.0;
    static constexpr double kMass = 1.0;
    static constexpr double kLength = 1.0;
    static constexpr double kDt = 0.05;
    static constexpr double kMaxSpeed = 8.0;
    static constexpr double kMaxTorque = 2.0;

    PendulumEnv() {
        spec_.name = "pendulum";
        spec_.state_dim = 3;
        spec_.action_dim = 1;
        spec_.action_low = {-kMaxTorque};
        spec_.action_high = {kMaxTorque};
        spec_.max_episode_steps = 200;
        const double pi = std::numbers::pi;
        spec_.reward_min = -(pi * pi + 0.1 * kMaxSpeed * kMaxSpeed + 0.001 * kMaxTorque * kMaxTorque);
        spec_.reward_max = 0.0;
    }

    static double angle_normalize(double x) {
        const double two_pi = 2.0 * std::numbers::pi;
        double r = std::fmod(x + std::numbers::pi, two_pi);
        if (r < 0) r += two_pi;
        return r - std::numbers::pi;
    }

    /// Total mechanical energy of the free rod (diagnostics/tests).
    double energy() const {
        return (kMass * kLength * kLength / 6.0) * thdot_ * thdot_ +
               (kMass * kG * kLength / 2.0) * std::cos(th_);
    }

    void set_state(double th, double thdot) {
        th_ = th;
        thdot_ = thdot;
        finished_ = false;
        step_count_ = 0;
    }

protected:
    std::vector<double> do_reset(Rng& rng) override {
        th_ = rng.uniform(-std::numbers::pi, std::numbers::pi);
        thdot_ = rng.uniform(-1.0, 1.0);
        return observe();
    }

    StepResult do_step(const std::vector<double>& action) override {
        const double u = action[0];
        const double th_n = angle_normalize(th_);
        const double cost = th_n * th_n + 0.1 * thdot_ * thdot_ + 0.001 * u * u;

        const double acc = 3.0 * kG / (2.0 * kLength) * std::sin(th_) +
                           3.0 / (kMass * kLength * kLength) * u;
        thdot_ = std::clamp(thdot_ + acc * kDt, -kMaxSpeed, kMaxSpeed);
        th_ += thdot_ * kDt;

        return StepResult{observe(), -cost, false};
    }

private:
    std::vector<double> observe() const { return {std::cos(th_), std::sin(th_), thdot_}; }

    double th_ = 0.0;
    double thdot_ = 0.0;
};

/// Velocity-controlled point reaching the origin: x' = x + dt*u, reward is
/// the negative distance to the goal after the move.
class PointMass2DEnv final : public Env {
public:
    static constexpr double kDt = 0.05;
    static constexpr double kBound = 2.0;

    PointMass2DEnv() {
        spec_.name = "pointmass2d";
        spec_.state_dim = 2;
        spec_.action_dim = 2;
        spec_.action_low = {-1.0, -1.0};
        spec_.action_high = {1.0, 1.0};
        spec_.max_episode_steps = 200;
        spec_.reward_min = -kBound * std::numbers::sqrt2;
        spec_.reward_max = 0.0;
    }

protected:
    std::vector<double> do_reset(Rng& rng) override {
        x_ = rng.uniform(-1.5, 1.5);
        y_ = rng.uniform(-1.5, 1.5);
        return {x_, y_};
    }

    StepResult do_step(const std::vector<double>& action) override {
        x_ = std::clamp(x_ + kDt * action[0], -kBound, kBound);
        y_ = std::clamp(y_ + kDt * action[1], -kBound, kBound);
        const double dist = std::sqrt(x_ * x_ + y_ * y_);
        return StepResult{{x_, y_}, -dist, false};
    }

private:
    double x_ = 0.0;
    double y_ = 0.0;
};

/// Continuous-force cart-pole balance: +1 per alive step, terminal when the
/// pole leaves +-12 degrees or the cart leaves +-2.4. Semi-implicit Euler.
class CartpoleContEnv final : public Env {
public:
    static constexpr double kG = 9.8;
    static constexpr double kMassCart = 1.0;
    static constexpr double kMassPole = 0.1;
    static constexpr double kHalfLength = 0.5;
    static constexpr double kMaxForce = 10.0;
    static constexpr double kDt = 0.05;
    static constexpr double kThetaLimit = 12.0 * std::numbers::pi / 180.0;
    static constexpr double kXLimit = 2.4;

    CartpoleContEnv() {
        spec_.name = "cartpole_cont";
        spec_.state_dim = 4;
        spec_.action_dim = 1;
        spec_.action_low = {-kMaxForce};
        spec_.action_high = {kMaxForce};
        spec_.max_episode_steps = 200;
        spec_.reward_min = 1.0;
        spec_.reward_max = 1.0;
    }

protected:
    std::vector<double> do_reset(Rng& rng) override {
        x_ = rng.uniform(-0.05, 0.05);
        xdot_ = rng.uniform(-0.05, 0.05);
        th_ = rng.uniform(-0.05, 0.05);
        thdot_ = rng.uniform(-0.05, 0.05);
        return observe();
    }

    StepResult do_step(const std::vector<double>& action) override {
        const double force = action[0];
        const double total_mass = kMassCart + kMassPole;
        const double pole_ml = kMassPole * kHalfLength;
        const double cos_th = std::cos(th_);
        const double sin_th = std::sin(th_);

        const double temp = (force + pole_ml * thdot_ * thdot_ * sin_th) / total_mass;
        const double th_acc = (kG * sin_th - cos_th * temp) /
                              (kHalfLength * (4.0 / 3.0 - kMassPole * cos_th * cos_th / total_mass));
        const double x_acc = temp - pole_ml * th_acc * cos_th / total_mass;

        thdot_ += kDt * th_acc;
        th_ += kDt * thdot_;
        xdot_ += kDt * x_acc;
        x_ += kDt * xdot_;

        const bool fell = std::abs(th_) > kThetaLimit || std::abs(x_) > kXLimit;
        return StepResult{observe(), 1.0, fell};
    }

private:
    std::vector<double> observe() const { return {x_, xdot_, th_, thdot_}; }

    double x_ = 0.0, xdot_ = 0.0, th_ = 0.0, thdot_ = 0.0;
};

inline std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "pendulum") return std::make_unique<PendulumEnv>();
    if (name == "pointmass2d") return std::make_unique<PointMass2DEnv>();
    if (name == "cartpole_cont") return std::make_unique<CartpoleContEnv>();
    throw ConfigError("unknown environment: " + name);
}

} // namespace ecsac
