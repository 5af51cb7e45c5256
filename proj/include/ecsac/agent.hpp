#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecsac/adam.hpp"
#include "ecsac/episodic_memory.hpp"
#include "ecsac/errors.hpp"
#include "ecsac/mlp.hpp"
#include "ecsac/policy.hpp"
#include "ecsac/projection.hpp"
#include "ecsac/replay_buffer.hpp"
#include "ecsac/transition.hpp"

namespace ecsac {

enum class Variant { expanded, vanilla, aux_ec };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::expanded: return "expanded";
        case Variant::vanilla: return "vanilla";
        case Variant::aux_ec: return "aux_ec";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "expanded") return Variant::expanded;
    if (s == "vanilla") return Variant::vanilla;
    if (s == "aux_ec") return Variant::aux_ec;
    throw ConfigError("unknown variant: " + s);
}

enum class AlphaMode { fixed, auto_tune };

struct AgentConfig {
    Variant variant = Variant::expanded;
    double eta = 0.5;      // weight of the past reward in r^e
    double gamma = 0.99;
    double alpha = 0.1;    // entropy temperature (initial value in auto mode)
    AlphaMode alpha_mode = AlphaMode::fixed;
    double tau = 0.005;
    std::size_t K = 2;     // neighbors retrieved
    std::size_t d = 2;     // MC-return trajectory length
    double lambda = 0.1;   // aux_ec only
    std::size_t batch_size = 256;
    double lr = 1e-3;
    std::size_t hidden = 256;
    double grad_clip = 10.0;
    bool clip_enabled = true;
    // Debug switch for the reduction property: skips retrieval entirely so an
    // expanded agent consumes exactly the same random draws as a vanilla one.
    bool force_zero_retrieval = false;
    unsigned retrieval_threads = 1;

    void validate() const {
        if (eta < 0.0) throw ConfigError("eta must be >= 0");
        if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0, 1]");
        if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must be in [0, 1]");
        if (K == 0) throw ConfigError("K must be >= 1");
        if (d == 0) throw ConfigError("d must be >= 1");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("lr must be > 0");
        if (hidden == 0) throw ConfigError("hidden must be >= 1");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    }
};

/// Training input for one gradient step: expanded states, blended rewards.
struct ExpandedBatch {
    Matrix se;       // B x 2S: [immediate state | retrieved past state]
    Matrix actions;  // B x A
    Matrix se_next;  // B x 2S
    std::vector<double> re;   // r^i + eta * r^p
    std::vector<double> ri;   // immediate reward
    std::vector<double> rp;   // blended MC-return (aux_ec target)
    std::vector<double> done; // 0/1
    std::vector<std::size_t> neighbor_count;

    std::size_t size() const { return se.rows; }
};

/// Q evaluation used by the actor objective. Call value() first; the
/// implementation keeps whatever it needs to answer grad_action() for the
/// same inputs. Tests plug analytic critics in through this seam.
struct QEval {
    virtual ~QEval() = default;
    virtual std::vector<double> value(const Matrix& states, const Matrix& actions) = 0;
    virtual Matrix grad_action(const Matrix& states, const Matrix& actions) = 0;
};

namespace detail {

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, a.cols + b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* row = c.row_ptr(i);
        const double* ra = a.row_ptr(i);
        const double* rb = b.row_ptr(i);
        for (std::size_t j = 0; j < a.cols; ++j) row[j] = ra[j];
        for (std::size_t j = 0; j < b.cols; ++j) row[a.cols + j] = rb[j];
    }
    return c;
}

/// min(Q1, Q2) with gradients routed through the per-row argmin critic.
class MinTwinQEval final : public QEval {
public:
    MinTwinQEval(const Mlp& q1, const Mlp& q2) : q1_(q1), q2_(q2) {}

    std::vector<double> value(const Matrix& states, const Matrix& actions) override {
        const Matrix x = concat_cols(states, actions);
        const Matrix v1 = mlp_forward(q1_, x, &tape1_);
        const Matrix v2 = mlp_forward(q2_, x, &tape2_);
        std::vector<double> v(x.rows);
        pick_.assign(x.rows, 0);
        for (std::size_t i = 0; i < x.rows; ++i) {
            if (v2(i, 0) < v1(i, 0)) {
                v[i] = v2(i, 0);
                pick_[i] = 1;
            } else {
                v[i] = v1(i, 0);
            }
        }
        state_cols_ = states.cols;
        return v;
    }

    Matrix grad_action(const Matrix& /*states*/, const Matrix& actions) override {
        Matrix og1(actions.rows, 1), og2(actions.rows, 1);
        for (std::size_t i = 0; i < actions.rows; ++i)
            (pick_[i] == 0 ? og1 : og2)(i, 0) = 1.0;
        const Matrix gx1 = mlp_backward_input_only(q1_, tape1_, og1);
        const Matrix gx2 = mlp_backward_input_only(q2_, tape2_, og2);
        Matrix ga(actions.rows, actions.cols);
        for (std::size_t i = 0; i < actions.rows; ++i)
            for (std::size_t j = 0; j < actions.cols; ++j)
                ga(i, j) = gx1(i, state_cols_ + j) + gx2(i, state_cols_ + j);
        return ga;
    }

private:
    const Mlp& q1_;
    const Mlp& q2_;
    GradientTape tape1_, tape2_;
    std::vector<int> pick_;
    std::size_t state_cols_ = 0;
};

} // namespace detail

/// EMA of the online parameters into the target: tgt = tau*online + (1-tau)*tgt.
inline void soft_update(const Mlp& online, Mlp& target, double tau) {
    if (online.layers.size() != target.layers.size())
        throw ConfigError("soft_update: network shapes differ");
    for (std::size_t l = 0; l < online.layers.size(); ++l) {
        const Layer& src = online.layers[l];
        Layer& dst = target.layers[l];
        for (std::size_t k = 0; k < src.W.data.size(); ++k)
            dst.W.data[k] = tau * src.W.data[k] + (1.0 - tau) * dst.W.data[k];
        for (std::size_t k = 0; k < src.b.size(); ++k)
            dst.b[k] = tau * src.b[k] + (1.0 - tau) * dst.b[k];
    }
}

/// Expanded-state SAC learner with twin critics and min-target bootstrap.
/// All three variants run on the same doubled input width; vanilla and
/// aux_ec simply keep the past-state slot zeroed, which is what makes the
/// eta=0 reduction property and the Q-diagnostic comparison well-posed.
class SacAgent {
public:
    AgentConfig cfg;
    std::size_t state_dim = 0;
    std::size_t action_dim = 0;

    GaussianPolicy policy;
    Mlp critic1, critic2, target1, target2;
    AdamState policy_opt, critic1_opt, critic2_opt;
    double log_alpha = 0.0;
    ScalarAdam alpha_opt;
    double target_entropy = 0.0;
    std::uint64_t grad_step_count = 0;

    SacAgent(std::size_t state_dim_, std::size_t action_dim_, std::vector<double> action_low,
             std::vector<double> action_high, AgentConfig config, Rng& rng)
        : cfg(config), state_dim(state_dim_), action_dim(action_dim_) {
        detail::tune_malloc_once();
        cfg.validate();
        const std::size_t in = expanded_dim();
        policy = GaussianPolicy::make(in, std::move(action_low), std::move(action_high), cfg.hidden, rng);
        critic1 = Mlp::make_two_hidden(in + action_dim, cfg.hidden, 1, rng);
        critic2 = Mlp::make_two_hidden(in + action_dim, cfg.hidden, 1, rng);
        target1 = critic1;
        target2 = critic2;
        policy_opt = AdamState::make_for(policy.net, cfg.lr);
        critic1_opt = AdamState::make_for(critic1, cfg.lr);
        critic2_opt = AdamState::make_for(critic2, cfg.lr);
        log_alpha = std::log(cfg.alpha);
        alpha_opt.lr = cfg.lr;
        target_entropy = -static_cast<double>(action_dim);
    }

    std::size_t expanded_dim() const { return 2 * state_dim; }
    double alpha() const { return std::exp(log_alpha); }

    /// Zero-pad plain states into the expanded width (vanilla/aux_ec inputs,
    /// cold starts, and the provisional draw that keys retrieval before a
    /// real action exists).
    Matrix pad_states(const Matrix& s) const {
        Matrix p(s.rows, expanded_dim());
        for (std::size_t i = 0; i < s.rows; ++i)
            for (std::size_t j = 0; j < s.cols; ++j) p(i, j) = s(i, j);
        return p;
    }

    Matrix expand_row(std::span<const double> state, std::span<const double> past_state) const {
        if (state.size() != state_dim || past_state.size() != state_dim)
            throw ConfigError("act_expanded: state widths must equal state_dim");
        Matrix x(1, expanded_dim());
        for (std::size_t j = 0; j < state_dim; ++j) {
            x(0, j) = state[j];
            x(0, state_dim + j) = past_state[j];
        }
        return x;
    }

    std::vector<double> act(std::span<const double> state, bool stochastic, Rng& rng) const {
        Matrix s(1, state_dim);
        for (std::size_t j = 0; j < state_dim; ++j) s(0, j) = state[j];
        const Matrix padded = pad_states(s);
        Matrix a = stochastic ? policy.sample(padded, rng).action : policy.act_deterministic(padded);
        return std::vector<double>(a.data.begin(), a.data.end());
    }

    /// Deterministic action; consumes no randomness (evaluation path).
    std::vector<double> act_deterministic(std::span<const double> state) const {
        Matrix s(1, state_dim);
        for (std::size_t j = 0; j < state_dim; ++j) s(0, j) = state[j];
        Matrix a = policy.act_deterministic(pad_states(s));
        return std::vector<double>(a.data.begin(), a.data.end());
    }

    /// Action on an explicitly expanded input [state; past_state]. The
    /// expanded variant interacts through this so the policy is queried on
    /// the same input distribution it trains on.
    std::vector<double> act_expanded(std::span<const double> state,
                                     std::span<const double> past_state, bool stochastic,
                                     Rng& rng) const {
        const Matrix x = expand_row(state, past_state);
        Matrix a = stochastic ? policy.sample(x, rng).action : policy.act_deterministic(x);
        return std::vector<double>(a.data.begin(), a.data.end());
    }

    std::vector<double> act_expanded_deterministic(std::span<const double> state,
                                                   std::span<const double> past_state) const {
        Matrix a = policy.act_deterministic(expand_row(state, past_state));
        return std::vector<double>(a.data.begin(), a.data.end());
    }

    /// Assemble the training batch. For the expanded variant the current
    /// row's (s, a) drives one retrieval and the next state, paired with a
    /// fresh provisional policy action sampled at [s'; 0], drives a second;
    /// the two retrievals run as one batched scan.
    ExpandedBatch build_expanded_batch(const std::vector<const Transition*>& rows,
                                       const EpisodicStore* store, const ProjectionMatrix* pm,
                                       Rng& rng) {
        const std::size_t B = rows.size();
        const std::size_t S = state_dim;
        ExpandedBatch b;
        b.se = Matrix(B, expanded_dim());
        b.se_next = Matrix(B, expanded_dim());
        b.actions = Matrix(B, action_dim);
        b.re.resize(B);
        b.ri.resize(B);
        b.rp.assign(B, 0.0);
        b.done.resize(B);
        b.neighbor_count.assign(B, 0);

        for (std::size_t i = 0; i < B; ++i) {
            const Transition& t = *rows[i];
            for (std::size_t j = 0; j < S; ++j) {
                b.se(i, j) = t.state[j];
                b.se_next(i, j) = t.next_state[j];
            }
            for (std::size_t j = 0; j < action_dim; ++j) b.actions(i, j) = t.action[j];
            b.ri[i] = t.reward;
            b.re[i] = t.reward;
            b.done[i] = t.done ? 1.0 : 0.0;
        }

        const bool retrieval = cfg.variant != Variant::vanilla && !cfg.force_zero_retrieval &&
                               store != nullptr && pm != nullptr;
        if (!retrieval) return b;

        const std::size_t pdim = pm->target_dim();
        if (cfg.variant == Variant::expanded) {
            // Provisional actions for the next-state query come from the
            // zero-padded next state; the TD target later draws its own
            // action at the fully expanded next state.
            Matrix next_raw(B, S);
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t j = 0; j < S; ++j) next_raw(i, j) = rows[i]->next_state[j];
            const PolicySample prov = policy.sample(pad_states(next_raw), rng);

            std::vector<double> keys(2 * B * pdim);
            for (std::size_t i = 0; i < B; ++i) {
                const auto k1 = pm->project(rows[i]->state, rows[i]->action);
                std::copy(k1.begin(), k1.end(), keys.begin() + i * pdim);
                std::span<const double> pa(prov.action.row_ptr(i), action_dim);
                const auto k2 = pm->project(rows[i]->next_state, pa);
                std::copy(k2.begin(), k2.end(), keys.begin() + (B + i) * pdim);
            }
            const auto results = retrieve_batch(*store, keys, 2 * B, S, cfg.K, cfg.d, cfg.gamma,
                                                cfg.retrieval_threads);
            for (std::size_t i = 0; i < B; ++i) {
                const RetrievalResult& cur = results[i];
                const RetrievalResult& nxt = results[B + i];
                for (std::size_t j = 0; j < S; ++j) {
                    b.se(i, S + j) = cur.past_state[j];
                    b.se_next(i, S + j) = nxt.past_state[j];
                }
                b.rp[i] = cur.past_reward;
                b.neighbor_count[i] = cur.neighbor_count;
                if (cfg.eta != 0.0 && cur.neighbor_count > 0)
                    b.re[i] = b.ri[i] + cfg.eta * cur.past_reward;
            }
        } else { // aux_ec: states and rewards stay unexpanded, retrieval only
                 // feeds the auxiliary Q target.
            std::vector<double> keys(B * pdim);
            for (std::size_t i = 0; i < B; ++i) {
                const auto k = pm->project(rows[i]->state, rows[i]->action);
                std::copy(k.begin(), k.end(), keys.begin() + i * pdim);
            }
            const auto results = retrieve_batch(*store, keys, B, S, cfg.K, cfg.d, cfg.gamma,
                                                cfg.retrieval_threads);
            for (std::size_t i = 0; i < B; ++i) {
                b.rp[i] = results[i].past_reward;
                b.neighbor_count[i] = results[i].neighbor_count;
            }
        }
        return b;
    }

    /// Y_i = r^e_i + gamma (1 - d_i) (min_targets Q(s^e', a~) - alpha log pi).
    /// done rows and gamma == 0 copy r^e exactly (no arithmetic on the
    /// bootstrap term at all), which the degenerate-case tests pin down.
    std::vector<double> td_target(const ExpandedBatch& b, Rng& rng) const {
        const std::size_t B = b.size();
        const PolicySample next = policy.sample(b.se_next, rng);
        const Matrix x = detail::concat_cols(b.se_next, next.action);
        const Matrix q1 = mlp_forward(target1, x);
        const Matrix q2 = mlp_forward(target2, x);
        const double a = alpha();
        std::vector<double> y(B);
        for (std::size_t i = 0; i < B; ++i) {
            if (b.done[i] != 0.0 || cfg.gamma == 0.0) {
                y[i] = b.re[i];
            } else {
                const double qmin = std::min(q1(i, 0), q2(i, 0));
                y[i] = b.re[i] + cfg.gamma * (qmin - a * next.log_prob[i]);
            }
            if (!std::isfinite(y[i]))
                throw DivergenceError("td_target: non-finite target at row " + std::to_string(i) +
                                      " (re=" + std::to_string(b.re[i]) + ")");
        }
        return y;
    }

    /// Twin MSE against Y; the aux_ec variant adds lambda (Q - G)^2 on rows
    /// that actually retrieved neighbors. Returns the loss value.
    double critic_update(const ExpandedBatch& b, const std::vector<double>& y) {
        const std::size_t B = b.size();
        const Matrix x = detail::concat_cols(b.se, b.actions);
        const double invB = 1.0 / static_cast<double>(B);
        const bool aux = cfg.variant == Variant::aux_ec && cfg.lambda != 0.0;

        double loss = 0.0;
        for (Mlp* critic : {&critic1, &critic2}) {
            GradientTape tape;
            const Matrix q = mlp_forward(*critic, x, &tape);
            Matrix og(B, 1);
            double mse = 0.0, aux_term = 0.0;
            for (std::size_t i = 0; i < B; ++i) {
                const double err = q(i, 0) - y[i];
                mse += err * err;
                og(i, 0) = err * invB;
                if (aux && b.neighbor_count[i] > 0) {
                    const double aerr = q(i, 0) - b.rp[i];
                    aux_term += aerr * aerr;
                    og(i, 0) += cfg.lambda * aerr * invB;
                }
            }
            loss += 0.5 * invB * (mse + cfg.lambda * aux_term);
            MlpGradients grads = mlp_backward(*critic, tape, og);
            if (cfg.clip_enabled) clip_global_norm(grads, cfg.grad_clip);
            adam_step(critic == &critic1 ? critic1_opt : critic2_opt, *critic, grads);
            if (!critic->all_finite())
                throw DivergenceError("critic_update: parameters went non-finite");
        }
        if (!std::isfinite(loss)) throw DivergenceError("critic_update: non-finite loss");
        return loss;
    }

    /// Reparameterized actor step against an arbitrary Q evaluation
    /// (min-twin in production, analytic critics in tests). Critics are
    /// treated as fixed. Returns the actor loss; updates alpha in auto mode.
    double actor_update_with_q(const Matrix& se, QEval& qeval, Rng& rng) {
        const std::size_t B = se.rows;
        const double invB = 1.0 / static_cast<double>(B);
        GradientTape tape;
        const PolicySample s = policy.sample(se, rng, &tape);
        const std::vector<double> q = qeval.value(se, s.action);
        const double a = alpha();

        double loss = 0.0;
        for (std::size_t i = 0; i < B; ++i) loss += a * s.log_prob[i] - q[i];
        loss *= invB;
        if (!std::isfinite(loss)) throw DivergenceError("actor_update: non-finite loss");

        Matrix dl_da = qeval.grad_action(se, s.action);
        for (double& g : dl_da.data) g *= -invB;
        std::vector<double> dl_dlp(B, a * invB);

        MlpGradients grads = policy.backward(s, tape, dl_da, dl_dlp);
        if (cfg.clip_enabled) clip_global_norm(grads, cfg.grad_clip);
        adam_step(policy_opt, policy.net, grads);
        if (!policy.net.all_finite())
            throw DivergenceError("actor_update: parameters went non-finite");

        if (cfg.alpha_mode == AlphaMode::auto_tune) {
            double mean_lp = 0.0;
            for (std::size_t i = 0; i < B; ++i) mean_lp += s.log_prob[i];
            mean_lp *= invB;
            alpha_opt.update(log_alpha, -(mean_lp + target_entropy));
        }
        return loss;
    }

    double actor_update(const ExpandedBatch& b, Rng& rng) {
        detail::MinTwinQEval qeval(critic1, critic2);
        return actor_update_with_q(b.se, qeval, rng);
    }

    void soft_update_targets() {
        soft_update(critic1, target1, cfg.tau);
        soft_update(critic2, target2, cfg.tau);
    }

    struct StepStats {
        double critic_loss = 0.0;
        double actor_loss = 0.0;
    };

    /// One full gradient step: TD target, critic update, actor update,
    /// target EMA — in that order.
    StepStats gradient_step(const ExpandedBatch& b, Rng& rng) {
        StepStats st;
        const auto y = td_target(b, rng);
        st.critic_loss = critic_update(b, y);
        st.actor_loss = actor_update(b, rng);
        soft_update_targets();
        ++grad_step_count;
        return st;
    }

    /// Mean over a fixed probe set of min-twin Q(s^e, pi(s^e)); the series
    /// is the overestimation diagnostic compared across variants.
    double q_diagnostic(const Matrix& probe_se) const {
        if (probe_se.rows == 0) return 0.0;
        const Matrix a = policy.act_deterministic(probe_se);
        const Matrix x = detail::concat_cols(probe_se, a);
        const Matrix q1 = mlp_forward(critic1, x);
        const Matrix q2 = mlp_forward(critic2, x);
        double m = 0.0;
        for (std::size_t i = 0; i < probe_se.rows; ++i) m += std::min(q1(i, 0), q2(i, 0));
        return m / static_cast<double>(probe_se.rows);
    }
};

} // namespace ecsac
