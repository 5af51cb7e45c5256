#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ecsac/agent.hpp"
#include "ecsac/checkpoint.hpp"
#include "ecsac/config.hpp"
#include "ecsac/envs.hpp"
#include "ecsac/episodic_memory.hpp"
#include "ecsac/errors.hpp"
#include "ecsac/projection.hpp"
#include "ecsac/replay_buffer.hpp"

namespace ecsac {

/// Per-step pipeline events, in their contractual order. Tests hook these to
/// verify the loop runs interaction -> both insertions -> retrieval ->
/// critic -> actor -> target EMA, every step.
enum class StepEvent {
    interact,
    push_replay,
    insert_memory,
    retrieve,
    critic_update,
    actor_update,
    soft_update,
};

using EventObserver = std::function<void(std::uint64_t env_step, StepEvent)>;

struct MetricsRow {
    std::uint64_t env_step = 0;
    double mean_eval_return = 0.0;
    double std_eval_return = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double q_diagnostic = 0.0;
    double wall_clock_s = 0.0; // goes to timing.csv, never to metrics.csv
};

struct TrainResult {
    std::uint64_t seed = 0;
    std::vector<MetricsRow> rows;
    std::string run_dir;
    double final_mean_eval_return = 0.0;
};

namespace detail {

inline std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
}

inline void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw ConfigError("cannot create directory " + p.string() + ": " + ec.message());
}

constexpr char kMetricsHeader[] = "# ecsac metrics format v1\n"
                                  "env_step,mean_eval_return,std_eval_return,critic_loss,actor_loss,q_diagnostic\n";

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << kMetricsHeader;
    for (const MetricsRow& r : rows) {
        out << r.env_step << ',' << fmt_real(r.mean_eval_return) << ',' << fmt_real(r.std_eval_return)
            << ',' << fmt_real(r.critic_loss) << ',' << fmt_real(r.actor_loss) << ','
            << fmt_real(r.q_diagnostic) << '\n';
    }
}

inline void write_timing_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "# ecsac timing format v1\nenv_step,wall_clock_s\n";
    for (const MetricsRow& r : rows) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_clock_s);
        out << r.env_step << ',' << buf << '\n';
    }
}

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> returns;
};

/// Retrieval context for acting: the expanded variant queries the policy on
/// [s; s^p], where s^p comes from a lookup keyed by a provisional action.
struct ActContext {
    const EpisodicStore* store = nullptr;
    const ProjectionMatrix* pm = nullptr;
    std::size_t K = 2;
    std::size_t d = 2;
    double gamma = 0.99;

    bool active() const { return store != nullptr && pm != nullptr; }
};

inline std::vector<double> act_for_env(const SacAgent& agent, std::span<const double> state,
                                       bool stochastic, Rng& rng, const ActContext& ctx) {
    if (!ctx.active()) return agent.act(state, stochastic, rng);
    // Retrieval needs an action before one exists: a provisional draw on the
    // zero-padded input keys the lookup, the real action comes from the
    // expanded input. With an empty store this collapses to the plain path.
    const auto provisional = stochastic ? agent.act(state, true, rng) : agent.act_deterministic(state);
    const auto rr = retrieve(*ctx.store, state, provisional, ctx.K, ctx.d, ctx.gamma, *ctx.pm);
    if (stochastic) return agent.act_expanded(state, rr.past_state, true, rng);
    return agent.act_expanded_deterministic(state, rr.past_state);
}

/// Deterministic-policy rollouts on a fresh evaluation stream. Never touches
/// the training RNG.
inline EvalStats evaluate_policy(const SacAgent& agent, Env& env, std::size_t episodes,
                                 std::uint64_t eval_seed_base, const ActContext& ctx = {}) {
    EvalStats st;
    st.returns.reserve(episodes);
    Rng unused(0);
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        std::vector<double> s = env.reset(mix_seed(eval_seed_base, ep));
        double total = 0.0;
        while (true) {
            const auto a = act_for_env(agent, s, /*stochastic=*/false, unused, ctx);
            StepResult r = env.step(a);
            total += r.reward;
            if (r.done) break;
            s = std::move(r.next_state);
        }
        st.returns.push_back(total);
    }
    double sum = 0.0;
    for (double r : st.returns) sum += r;
    st.mean = sum / static_cast<double>(st.returns.size());
    double sq = 0.0;
    for (double r : st.returns) sq += (r - st.mean) * (r - st.mean);
    st.stddev = std::sqrt(sq / static_cast<double>(st.returns.size()));
    return st;
}

} // namespace detail

/// One seed's full training run: the interaction/gradient loop with one
/// gradient step per environment step after warmup, evaluation every
/// eval_interval steps, and a final checkpoint. Deterministic: a fixed
/// (config, seed) yields byte-identical metrics.csv on every invocation.
inline TrainResult train_one(const RunConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& run_dir,
                             const EventObserver& observer = {}) {
    cfg.validate();
    detail::ensure_dir(run_dir);
    const auto t_start = std::chrono::steady_clock::now();

    Rng master(seed);
    auto env = make_env(cfg.env);
    auto eval_env = make_env(cfg.env);
    const EnvSpec& spec = env->spec();

    ReplayBuffer buffer(cfg.capacity);
    EpisodicStore store(cfg.capacity, cfg.projection_dim);
    if (buffer.capacity() != store.capacity())
        throw ConfigError("replay buffer and episodic memory capacities must match");
    ProjectionMatrix pm(spec.state_dim + spec.action_dim, cfg.projection_dim, mix_seed(seed, 1));

    SacAgent agent(spec.state_dim, spec.action_dim, spec.action_low, spec.action_high, cfg.agent,
                   master);

    TrainResult result;
    result.seed = seed;
    result.run_dir = run_dir.string();

    Matrix probes; // sampled once per run, at the end of warmup
    std::uint64_t episode_id = 0;
    std::uint64_t step_in_episode = 0;
    std::vector<double> state = env->reset(mix_seed(seed, 2, episode_id));
    double loss_sum_c = 0.0, loss_sum_a = 0.0;
    std::uint64_t loss_count = 0;

    const std::size_t probe_at = std::max<std::size_t>(cfg.warmup_steps, 1);
    detail::ActContext act_ctx;
    if (cfg.agent.variant == Variant::expanded && !cfg.agent.force_zero_retrieval) {
        act_ctx.store = &store;
        act_ctx.pm = &pm;
        act_ctx.K = cfg.agent.K;
        act_ctx.d = cfg.agent.d;
        act_ctx.gamma = cfg.agent.gamma;
    }

    try {
        for (std::uint64_t t = 1; t <= cfg.total_env_steps; ++t) {
            // --- interaction ---
            std::vector<double> action(spec.action_dim);
            if (t <= cfg.warmup_steps) {
                for (std::size_t j = 0; j < spec.action_dim; ++j)
                    action[j] = master.uniform(spec.action_low[j], spec.action_high[j]);
            } else {
                action = detail::act_for_env(agent, state, /*stochastic=*/true, master, act_ctx);
            }
            StepResult sr = env->step(action);
            if (observer) observer(t, StepEvent::interact);

            Transition tr;
            tr.state = state;
            tr.action = action;
            tr.reward = sr.reward;
            tr.next_state = sr.next_state;
            tr.done = sr.done;
            tr.episode_id = episode_id;
            tr.step_in_episode = step_in_episode;

            buffer.push(tr);
            if (observer) observer(t, StepEvent::push_replay);
            const auto key = pm.project(tr.state, tr.action);
            store.insert(tr, key, t);
            if (observer) observer(t, StepEvent::insert_memory);

            if (sr.done) {
                ++episode_id;
                step_in_episode = 0;
                state = env->reset(mix_seed(seed, 2, episode_id));
            } else {
                state = std::move(sr.next_state);
                ++step_in_episode;
            }

            if (t == probe_at) {
                // Fixed for the rest of the run. Each variant pads the raw
                // probe states the way its own interaction inputs look:
                // retrieval-expanded for the expanded variant, zeros otherwise.
                const std::size_t m = std::min<std::size_t>(cfg.probe_count, 4096);
                Matrix raw(m, spec.state_dim);
                for (std::size_t i = 0; i < m; ++i) {
                    const Transition& p = buffer.at_logical(master.uniform_index(buffer.size()));
                    for (std::size_t j = 0; j < spec.state_dim; ++j) raw(i, j) = p.state[j];
                }
                probes = agent.pad_states(raw);
                if (act_ctx.active()) {
                    for (std::size_t i = 0; i < m; ++i) {
                        std::span<const double> s(raw.row_ptr(i), spec.state_dim);
                        const auto prov = agent.act_deterministic(s);
                        const auto rr = retrieve(store, s, prov, cfg.agent.K, cfg.agent.d,
                                                 cfg.agent.gamma, pm);
                        for (std::size_t j = 0; j < spec.state_dim; ++j)
                            probes(i, spec.state_dim + j) = rr.past_state[j];
                    }
                }
            }

            // --- gradient step (one per env step after warmup) ---
            if (t > cfg.warmup_steps) {
                const auto slots = buffer.sample_slots(cfg.agent.batch_size, master);
                std::vector<const Transition*> rows(slots.size());
                for (std::size_t i = 0; i < slots.size(); ++i) rows[i] = &buffer.at_slot(slots[i]);

                ExpandedBatch batch = agent.build_expanded_batch(rows, &store, &pm, master);
                if (observer) observer(t, StepEvent::retrieve);
                const auto y = agent.td_target(batch, master);
                const double closs = agent.critic_update(batch, y);
                if (observer) observer(t, StepEvent::critic_update);
                const double aloss = agent.actor_update(batch, master);
                if (observer) observer(t, StepEvent::actor_update);
                agent.soft_update_targets();
                if (observer) observer(t, StepEvent::soft_update);
                ++agent.grad_step_count;

                loss_sum_c += closs;
                loss_sum_a += aloss;
                ++loss_count;
            }

            // --- evaluation point ---
            if (t % cfg.eval_interval == 0) {
                const std::uint64_t eval_index = t / cfg.eval_interval;
                const auto st = detail::evaluate_policy(agent, *eval_env, cfg.eval_episodes,
                                                        mix_seed(seed, 3, eval_index), act_ctx);
                MetricsRow row;
                row.env_step = t;
                row.mean_eval_return = st.mean;
                row.std_eval_return = st.stddev;
                row.critic_loss = loss_count ? loss_sum_c / static_cast<double>(loss_count) : 0.0;
                row.actor_loss = loss_count ? loss_sum_a / static_cast<double>(loss_count) : 0.0;
                row.q_diagnostic = agent.q_diagnostic(probes);
                row.wall_clock_s =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
                result.rows.push_back(row);
                loss_sum_c = loss_sum_a = 0.0;
                loss_count = 0;
            }
        }
    } catch (const DivergenceError& e) {
        std::ofstream dump(run_dir / "divergence.txt");
        dump << "divergence at grad_step=" << agent.grad_step_count << "\n"
             << "what: " << e.what() << "\n"
             << "alpha: " << agent.alpha() << "\n";
        throw;
    }

    detail::write_metrics_csv(run_dir / "metrics.csv", result.rows);
    detail::write_timing_csv(run_dir / "timing.csv", result.rows);

    std::vector<DumpedTransition> dumped;
    if (cfg.dump_buffer) {
        dumped.reserve(buffer.size());
        const std::uint64_t first_index = cfg.total_env_steps - buffer.size() + 1;
        for (std::size_t i = 0; i < buffer.size(); ++i)
            dumped.push_back(DumpedTransition{buffer.at_logical(i), first_index + i});
    }
    save_checkpoint((run_dir / "checkpoint.bin").string(), agent, pm, cfg.env, cfg.total_env_steps,
                    master.save_state(), cfg.dump_buffer ? &dumped : nullptr);

    if (!result.rows.empty()) result.final_mean_eval_return = result.rows.back().mean_eval_return;
    return result;
}

namespace detail {

/// Run independent jobs on up to `jobs` worker threads. Each job owns its
/// state; the first exception wins and is rethrown after all workers finish.
inline void run_jobs(std::vector<std::function<void()>> tasks, unsigned jobs) {
    if (jobs <= 1 || tasks.size() <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            std::size_t idx;
            {
                std::lock_guard lock(mu);
                if (next >= tasks.size() || first_error) return;
                idx = next++;
            }
            try {
                tasks[idx]();
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned n = std::min<unsigned>(jobs, static_cast<unsigned>(tasks.size()));
    pool.reserve(n);
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline unsigned effective_jobs(const RunConfig& cfg, std::size_t n_tasks) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned want = cfg.jobs ? cfg.jobs : hw;
    return std::min<unsigned>(want, static_cast<unsigned>(n_tasks));
}

} // namespace detail

struct RunOutputs {
    std::string out_dir;
    std::vector<TrainResult> per_seed;
};

/// Whole `train` invocation: echoes the effective config, then trains every
/// seed as an independent job (seed<k>/ subdirectories). Retrieval fan-out
/// inside each run stays single-threaded whenever seeds run in parallel.
inline RunOutputs train(const RunConfig& cfg, const EventObserver& observer = {}) {
    cfg.validate();
    const std::filesystem::path out(cfg.out_dir);
    detail::ensure_dir(out);
    {
        std::ofstream echo(out / "config.echo");
        echo << cfg.echo();
    }
    const unsigned jobs = detail::effective_jobs(cfg, cfg.seeds.size());
    RunConfig run_cfg = cfg;
    if (jobs > 1)
        run_cfg.agent.retrieval_threads = 1;
    else
        run_cfg.agent.retrieval_threads = std::max(1u, std::thread::hardware_concurrency());

    RunOutputs outputs;
    outputs.out_dir = cfg.out_dir;
    outputs.per_seed.resize(cfg.seeds.size());

    std::vector<std::function<void()>> tasks;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        tasks.push_back([&, i] {
            const auto seed = cfg.seeds[i];
            outputs.per_seed[i] =
                train_one(run_cfg, seed, out / ("seed" + std::to_string(seed)), observer);
        });
    }
    detail::run_jobs(std::move(tasks), jobs);
    return outputs;
}

struct EvalResult {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> returns;
};

/// Deterministic-policy evaluation of a saved checkpoint. When the
/// checkpoint carries a buffer dump, the episodic memory is rebuilt so an
/// expanded-variant policy is queried on its training input distribution;
/// without one it falls back to the cold (zero past-state) inputs.
inline EvalResult evaluate_checkpoint(const std::string& checkpoint_path, std::size_t episodes,
                                      std::uint64_t seed) {
    if (episodes == 0) throw ConfigError("episodes must be >= 1");
    Checkpoint ck = load_checkpoint(checkpoint_path);
    auto env = make_env(ck.env_name);
    if (env->spec().state_dim != ck.state_dim || env->spec().action_dim != ck.action_dim)
        throw ConfigError("checkpoint/environment dimension mismatch");

    detail::ActContext ctx;
    ReplayBuffer buffer(std::max<std::size_t>(ck.buffer.size(), 1));
    EpisodicStore store(std::max<std::size_t>(ck.buffer.size(), 1), ck.projection->target_dim());
    if (ck.agent_cfg.variant == Variant::expanded && !ck.buffer.empty()) {
        rebuild_stores(ck, buffer, store);
        ctx.store = &store;
        ctx.pm = &*ck.projection;
        ctx.K = ck.agent_cfg.K;
        ctx.d = ck.agent_cfg.d;
        ctx.gamma = ck.agent_cfg.gamma;
    }
    const auto st = detail::evaluate_policy(*ck.agent, *env, episodes, mix_seed(seed, 0xECA1), ctx);
    return EvalResult{st.mean, st.stddev, st.returns};
}

struct SweepRow {
    double eta = 0.0;
    double best_mean_eval_return = 0.0;
    double final_mean_eval_return = 0.0;
};

struct SweepOutputs {
    std::string out_dir;
    std::vector<SweepRow> summary;
    std::vector<std::vector<TrainResult>> per_eta; // [eta][seed]
};

/// The eta ablation: one full train() per (eta, seed), plus a summary table
/// of the best mean episode reward per eta (mean across seeds at matched
/// steps, maximized over evaluation points).
inline SweepOutputs sweep_eta(const RunConfig& cfg, const std::vector<double>& eta_list) {
    cfg.validate();
    if (eta_list.empty()) throw ConfigError("sweep-eta: empty eta list");
    for (double e : eta_list)
        if (e < 0.0) throw ConfigError("sweep-eta: eta values must be >= 0");
    if (cfg.total_env_steps < cfg.eval_interval)
        throw ConfigError("sweep-eta: total_env_steps must cover at least one eval_interval");

    const std::filesystem::path out(cfg.out_dir);
    detail::ensure_dir(out);
    {
        std::ofstream echo(out / "config.echo");
        echo << cfg.echo();
    }

    SweepOutputs outputs;
    outputs.out_dir = cfg.out_dir;
    outputs.per_eta.assign(eta_list.size(), std::vector<TrainResult>(cfg.seeds.size()));

    const unsigned jobs = detail::effective_jobs(cfg, eta_list.size() * cfg.seeds.size());
    RunConfig run_cfg = cfg;
    run_cfg.agent.retrieval_threads = jobs > 1 ? 1 : std::max(1u, std::thread::hardware_concurrency());

    std::vector<std::function<void()>> tasks;
    for (std::size_t e = 0; e < eta_list.size(); ++e) {
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
            tasks.push_back([&, e, s] {
                RunConfig job_cfg = run_cfg;
                job_cfg.agent.eta = eta_list[e];
                char tag[32];
                std::snprintf(tag, sizeof tag, "eta_%g", eta_list[e]);
                const auto dir = out / tag / ("seed" + std::to_string(cfg.seeds[s]));
                outputs.per_eta[e][s] = train_one(job_cfg, cfg.seeds[s], dir);
            });
        }
    }
    detail::run_jobs(std::move(tasks), jobs);

    for (std::size_t e = 0; e < eta_list.size(); ++e) {
        const auto& runs = outputs.per_eta[e];
        const std::size_t n_rows = runs.front().rows.size();
        double best = 0.0, final_mean = 0.0;
        for (std::size_t r = 0; r < n_rows; ++r) {
            double mean = 0.0;
            for (const auto& run : runs) mean += run.rows[r].mean_eval_return;
            mean /= static_cast<double>(runs.size());
            if (r == 0 || mean > best) best = mean;
            final_mean = mean;
        }
        outputs.summary.push_back(SweepRow{eta_list[e], best, final_mean});
    }

    std::ofstream sum(out / "summary.csv");
    sum << "# ecsac sweep summary v1\neta,best_mean_eval_return,final_mean_eval_return\n";
    for (const SweepRow& r : outputs.summary)
        sum << detail::fmt_real(r.eta) << ',' << detail::fmt_real(r.best_mean_eval_return) << ','
            << detail::fmt_real(r.final_mean_eval_return) << '\n';
    return outputs;
}

struct QdiagOutputs {
    std::string out_dir;
    std::vector<std::string> variants;
    std::vector<std::uint64_t> env_steps;
    std::vector<std::vector<double>> series; // [variant][eval point], mean across seeds
    std::vector<std::vector<TrainResult>> per_variant;
};

/// Paired Q-estimate series: each requested variant trains on the same seeds
/// and the per-step mean q_diagnostic lands in one aligned table.
inline QdiagOutputs qdiag_compare(const RunConfig& cfg, const std::vector<Variant>& variants) {
    cfg.validate();
    if (variants.size() < 2) throw ConfigError("qdiag: need at least 2 variants");
    if (cfg.total_env_steps < cfg.eval_interval)
        throw ConfigError("qdiag: total_env_steps must cover at least one eval_interval");

    const std::filesystem::path out(cfg.out_dir);
    detail::ensure_dir(out);
    {
        std::ofstream echo(out / "config.echo");
        echo << cfg.echo();
    }

    QdiagOutputs outputs;
    outputs.out_dir = cfg.out_dir;
    outputs.per_variant.assign(variants.size(), std::vector<TrainResult>(cfg.seeds.size()));
    for (Variant v : variants) outputs.variants.push_back(variant_name(v));

    const unsigned jobs = detail::effective_jobs(cfg, variants.size() * cfg.seeds.size());
    RunConfig run_cfg = cfg;
    run_cfg.agent.retrieval_threads = jobs > 1 ? 1 : std::max(1u, std::thread::hardware_concurrency());

    std::vector<std::function<void()>> tasks;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
            tasks.push_back([&, v, s] {
                RunConfig job_cfg = run_cfg;
                job_cfg.agent.variant = variants[v];
                const auto dir = out / (std::string(variant_name(variants[v])) + "_" + std::to_string(v)) /
                                 ("seed" + std::to_string(cfg.seeds[s]));
                outputs.per_variant[v][s] = train_one(job_cfg, cfg.seeds[s], dir);
            });
        }
    }
    detail::run_jobs(std::move(tasks), jobs);

    const std::size_t n_rows = outputs.per_variant.front().front().rows.size();
    for (std::size_t r = 0; r < n_rows; ++r)
        outputs.env_steps.push_back(outputs.per_variant.front().front().rows[r].env_step);
    outputs.series.assign(variants.size(), std::vector<double>(n_rows, 0.0));
    for (std::size_t v = 0; v < variants.size(); ++v)
        for (std::size_t r = 0; r < n_rows; ++r) {
            double mean = 0.0;
            for (const auto& run : outputs.per_variant[v]) mean += run.rows[r].q_diagnostic;
            outputs.series[v][r] = mean / static_cast<double>(cfg.seeds.size());
        }

    std::ofstream qd(out / "qdiag.csv");
    qd << "# ecsac qdiag format v1\nenv_step";
    for (std::size_t v = 0; v < variants.size(); ++v) qd << ",q_" << outputs.variants[v] << "_" << v;
    qd << "\n";
    for (std::size_t r = 0; r < n_rows; ++r) {
        qd << outputs.env_steps[r];
        for (std::size_t v = 0; v < variants.size(); ++v) qd << ',' << detail::fmt_real(outputs.series[v][r]);
        qd << "\n";
    }
    return outputs;
}

} // namespace ecsac
