#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/mlp.hpp"

namespace ecsac {

/// One reparameterized draw from the policy, with everything the hand-derived
/// backward pass needs. `action` is env-scaled; `log_prob` includes the tanh
/// change-of-variables correction, so it is a density over the action box.
struct PolicySample {
    Matrix action;   // B x A
    Matrix mean;     // B x A
    Matrix log_std;  // B x A, after clamping
    Matrix noise;    // B x A, the fixed standard-normal draw
    Matrix tanh_u;   // B x A, tanh of the pre-squash sample
    std::vector<double> log_prob; // B
    std::vector<bool> clamped;    // B*A, true where log_std hit a clamp bound
};

/// Tanh-squashed diagonal Gaussian policy head on a dense trunk. The network
/// maps the (expanded) state to [mean | log_std] per action dimension;
/// log_std is clamped to [-20, 2] and actions are squashed into the
/// environment's box.
class GaussianPolicy {
public:
    static constexpr double kLogStdMin = -20.0;
    static constexpr double kLogStdMax = 2.0;
    static constexpr double kSquashEps = 1e-6;

    Mlp net;
    std::vector<double> action_low;
    std::vector<double> action_high;

    static GaussianPolicy make(std::size_t input_dim, std::vector<double> low,
                               std::vector<double> high, std::size_t hidden, Rng& rng) {
        if (low.size() != high.size() || low.empty())
            throw ConfigError("GaussianPolicy: bad action bounds");
        GaussianPolicy p;
        p.action_low = std::move(low);
        p.action_high = std::move(high);
        p.net = Mlp::make_two_hidden(input_dim, hidden, 2 * p.action_low.size(), rng);
        return p;
    }

    std::size_t action_dim() const { return action_low.size(); }
    std::size_t input_dim() const { return net.input_dim(); }

    double scale(std::size_t j) const { return 0.5 * (action_high[j] - action_low[j]); }
    double bias(std::size_t j) const { return 0.5 * (action_high[j] + action_low[j]); }

    /// Reparameterized sample with externally supplied noise (tests use this
    /// to pin the draw; sample() below feeds it from the run's stream).
    PolicySample sample_with_noise(const Matrix& states, const Matrix& noise,
                                   GradientTape* tape = nullptr) const {
        const std::size_t B = states.rows;
        const std::size_t A = action_dim();
        Matrix out = mlp_forward(net, states, tape);

        PolicySample s;
        s.action = Matrix(B, A);
        s.mean = Matrix(B, A);
        s.log_std = Matrix(B, A);
        s.noise = noise;
        s.tanh_u = Matrix(B, A);
        s.log_prob.assign(B, 0.0);
        s.clamped.assign(B * A, false);

        constexpr double kHalfLog2Pi = 0.9189385332046727; // 0.5*log(2*pi)
        for (std::size_t i = 0; i < B; ++i) {
            double lp = 0.0;
            for (std::size_t j = 0; j < A; ++j) {
                const double mu = out(i, 2 * j);
                double ls = out(i, 2 * j + 1);
                if (ls < kLogStdMin || ls > kLogStdMax) {
                    s.clamped[i * A + j] = true;
                    ls = std::clamp(ls, kLogStdMin, kLogStdMax);
                }
                const double sd = std::exp(ls);
                const double xi = noise(i, j);
                const double u = mu + sd * xi;
                const double t = std::tanh(u);
                s.mean(i, j) = mu;
                s.log_std(i, j) = ls;
                s.tanh_u(i, j) = t;
                s.action(i, j) = scale(j) * t + bias(j);
                lp += -0.5 * xi * xi - ls - kHalfLog2Pi;
                lp -= std::log(scale(j) * (1.0 - t * t) + kSquashEps);
            }
            s.log_prob[i] = lp;
        }
        return s;
    }

    PolicySample sample(const Matrix& states, Rng& rng, GradientTape* tape = nullptr) const {
        Matrix noise(states.rows, action_dim());
        for (double& n : noise.data) n = rng.normal();
        return sample_with_noise(states, noise, tape);
    }

    /// Mode of the squashed distribution: tanh(mean), env-scaled.
    Matrix act_deterministic(const Matrix& states) const {
        Matrix out = mlp_forward(net, states);
        Matrix a(states.rows, action_dim());
        for (std::size_t i = 0; i < states.rows; ++i)
            for (std::size_t j = 0; j < action_dim(); ++j)
                a(i, j) = scale(j) * std::tanh(out(i, 2 * j)) + bias(j);
        return a;
    }

    /// Log-density of an arbitrary in-bounds action (diagnostics and the
    /// normalization quadrature check).
    double log_prob_for_action(const Matrix& states, std::size_t row,
                               std::span<const double> action) const {
        Matrix out = mlp_forward(net, states);
        constexpr double kHalfLog2Pi = 0.9189385332046727;
        double lp = 0.0;
        for (std::size_t j = 0; j < action_dim(); ++j) {
            const double mu = out(row, 2 * j);
            const double ls = std::clamp(out(row, 2 * j + 1), kLogStdMin, kLogStdMax);
            const double sd = std::exp(ls);
            double y = (action[j] - bias(j)) / scale(j);
            y = std::clamp(y, -1.0 + 1e-15, 1.0 - 1e-15);
            const double u = 0.5 * std::log((1.0 + y) / (1.0 - y)); // atanh
            const double xi = (u - mu) / sd;
            const double t = std::tanh(u);
            lp += -0.5 * xi * xi - ls - kHalfLog2Pi;
            lp -= std::log(scale(j) * (1.0 - t * t) + kSquashEps);
        }
        return lp;
    }

    /// Backward through the reparameterized draw. dL_daction is B x A,
    /// dL_dlogp is length B; returns gradients for the trunk parameters.
    /// Gradients do not pass a clamped log_std (hard clamp semantics).
    MlpGradients backward(const PolicySample& s, GradientTape& tape,
                          const Matrix& dL_daction, std::span<const double> dL_dlogp) const {
        const std::size_t B = s.action.rows;
        const std::size_t A = action_dim();
        Matrix out_grad(B, 2 * A);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < A; ++j) {
                const double sc = scale(j);
                const double t = s.tanh_u(i, j);
                const double one_m_t2 = 1.0 - t * t;
                const double D = sc * one_m_t2 + kSquashEps;
                const double sd = std::exp(s.log_std(i, j));
                const double xi = s.noise(i, j);
                const double da_du = sc * one_m_t2;
                const double dlp_du = 2.0 * sc * t * one_m_t2 / D;

                const double g_mu = dL_daction(i, j) * da_du + dL_dlogp[i] * dlp_du;
                const double g_sd = dL_daction(i, j) * da_du * xi +
                                    dL_dlogp[i] * (-1.0 / sd + dlp_du * xi);
                out_grad(i, 2 * j) = g_mu;
                out_grad(i, 2 * j + 1) = s.clamped[i * A + j] ? 0.0 : sd * g_sd;
            }
        }
        return mlp_backward(net, tape, out_grad);
    }
};

} // namespace ecsac
