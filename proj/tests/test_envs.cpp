#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ecsac/envs.hpp"

using namespace ecsac;

TEST_CASE("factory knows all three environments and rejects others") {
    for (const char* name : {"pendulum", "pointmass2d", "cartpole_cont"}) {
        auto env = make_env(name);
        CHECK(env->spec().name == name);
        CHECK(env->spec().state_dim == env->reset(0).size());
    }
    CHECK_THROWS_AS(make_env("halfcheetah"), ConfigError);
}

TEST_CASE("reset determinism: same seed -> identical initial state, different seeds differ") {
    for (const char* name : {"pendulum", "pointmass2d", "cartpole_cont"}) {
        auto env = make_env(name);
        const auto s1 = env->reset(123);
        const auto s2 = env->reset(123);
        CHECK(s1 == s2);
        const auto s3 = env->reset(124);
        CHECK(s1 != s3);
    }
}

TEST_CASE("trajectories are bit-identical for identical (seed, action sequence)") {
    for (const char* name : {"pendulum", "pointmass2d", "cartpole_cont"}) {
        auto a = make_env(name);
        auto b = make_env(name);
        a->reset(7);
        b->reset(7);
        Rng rng(3);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> act(a->spec().action_dim);
            for (double& v : act)
                v = rng.uniform(a->spec().action_low[0], a->spec().action_high[0]);
            const auto ra = a->step(act);
            const auto rb = b->step(act);
            CHECK(ra.next_state == rb.next_state);
            CHECK(ra.reward == rb.reward);
            CHECK(ra.done == rb.done);
            if (ra.done) break;
        }
    }
}

TEST_CASE("rewards stay within the declared range; horizon always terminates") {
    Rng rng(5);
    for (const char* name : {"pendulum", "pointmass2d", "cartpole_cont"}) {
        auto env = make_env(name);
        const auto& spec = env->spec();
        env->reset(11);
        std::size_t steps = 0;
        while (true) {
            std::vector<double> act(spec.action_dim);
            for (std::size_t i = 0; i < act.size(); ++i)
                act[i] = rng.uniform(spec.action_low[i], spec.action_high[i]);
            const auto r = env->step(act);
            ++steps;
            CHECK(r.reward >= spec.reward_min - 1e-12);
            CHECK(r.reward <= spec.reward_max + 1e-12);
            CHECK(steps <= spec.max_episode_steps);
            if (r.done) break;
        }
        CHECK(steps <= spec.max_episode_steps);
    }
}

TEST_CASE("stepping a finished episode is a usage error") {
    auto env = make_env("pointmass2d");
    env->reset(1);
    StepResult r;
    do {
        r = env->step(std::vector<double>{0.1, 0.1});
    } while (!r.done);
    CHECK_THROWS_AS(env->step(std::vector<double>{0.1, 0.1}), UsageError);
}

TEST_CASE("out-of-range actions are clamped and counted") {
    auto env = make_env("pendulum");
    env->reset(0);
    CHECK(env->clamp_count() == 0);
    env->step(std::vector<double>{55.0});
    CHECK(env->clamp_count() == 1);
}

TEST_CASE("pendulum: initial angle within [-pi, pi], observation is (cos, sin, thdot)") {
    auto env = make_env("pendulum");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = env->reset(seed);
        REQUIRE(s.size() == 3);
        const double th = std::atan2(s[1], s[0]);
        CHECK(th >= -std::numbers::pi);
        CHECK(th <= std::numbers::pi);
        CHECK(std::abs(s[0] * s[0] + s[1] * s[1] - 1.0) < 1e-12);
        CHECK(std::abs(s[2]) <= 1.0);
    }
}

TEST_CASE("pendulum: upright rest with zero torque costs ~0") {
    PendulumEnv env;
    env.reset(0);
    env.set_state(0.0, 0.0);
    const auto r = env.step(std::vector<double>{0.0});
    CHECK(r.reward == 0.0);
}

TEST_CASE("pendulum: hand-applied cost at a known state") {
    PendulumEnv env;
    env.reset(0);
    env.set_state(1.0, 0.5);
    const double u = 1.5;
    const auto r = env.step(std::vector<double>{u});
    const double expected = -(1.0 * 1.0 + 0.1 * 0.5 * 0.5 + 0.001 * u * u);
    CHECK(r.reward == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("pendulum energy sanity: free swing drifts < 1% over 200 Euler steps") {
    PendulumEnv env;
    env.reset(0);
    // Small oscillation around the hanging equilibrium, far from the speed clamp.
    env.set_state(std::numbers::pi + 0.2, 0.0);
    const double e0 = env.energy();
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        env.step(std::vector<double>{0.0});
        worst = std::max(worst, std::abs(env.energy() - e0));
    }
    CHECK(worst < 0.01 * std::abs(e0));
}

TEST_CASE("pointmass2d: Euler update is x' = x + dt*u, hand-checkable") {
    auto env = make_env("pointmass2d");
    const auto s0 = env->reset(42);
    const std::vector<double> u = {0.8, -0.4};
    const auto r = env->step(u);
    CHECK(r.next_state[0] == doctest::Approx(s0[0] + 0.05 * u[0]).epsilon(1e-15));
    CHECK(r.next_state[1] == doctest::Approx(s0[1] + 0.05 * u[1]).epsilon(1e-15));
    const double dist = std::sqrt(r.next_state[0] * r.next_state[0] +
                                  r.next_state[1] * r.next_state[1]);
    CHECK(r.reward == doctest::Approx(-dist).epsilon(1e-15));
}

TEST_CASE("pointmass2d: horizon 200 always returns done") {
    auto env = make_env("pointmass2d");
    env->reset(3);
    StepResult r;
    std::size_t steps = 0;
    do {
        r = env->step(std::vector<double>{0.0, 0.0});
        ++steps;
    } while (!r.done);
    CHECK(steps == 200);
}

TEST_CASE("cartpole_cont: +1 reward per alive step, terminal on pole fall") {
    auto env = make_env("cartpole_cont");
    env->reset(5);
    // A constant hard shove tips the pole quickly at dt = 0.05.
    std::size_t steps = 0;
    StepResult r;
    do {
        r = env->step(std::vector<double>{10.0});
        CHECK(r.reward == 1.0);
        ++steps;
    } while (!r.done);
    CHECK(steps < 200); // fell, not horizon
    const double theta = r.next_state[2];
    const double x = r.next_state[0];
    CHECK((std::abs(theta) > CartpoleContEnv::kThetaLimit || std::abs(x) > CartpoleContEnv::kXLimit));
}

TEST_CASE("cartpole_cont: near-balanced start survives a while under zero force") {
    auto env = make_env("cartpole_cont");
    env->reset(9);
    std::size_t steps = 0;
    StepResult r;
    do {
        r = env->step(std::vector<double>{0.0});
        ++steps;
    } while (!r.done && steps < 200);
    CHECK(steps > 5);
}
