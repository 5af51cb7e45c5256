#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecsac/config.hpp"
#include "ecsac/envs.hpp"
#include "ecsac/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string env;
    std::string variant;
    double eta = 0.0;
    long long seed = -1;
    std::string seeds;
    long long steps = -1;
    std::string out;
    long long warmup = -1;
    long long eval_interval = -1;
    long long eval_episodes = -1;
    long long capacity = -1;
    long long jobs = -1;
    bool dump_buffer = false;

    CLI::Option* eta_opt = nullptr;

    void attach(CLI::App& cmd) {
        cmd.add_option("--config", config_path, "flat key=value config file");
        cmd.add_option("--env", env, "environment name (pendulum, pointmass2d, cartpole_cont)");
        cmd.add_option("--variant", variant, "agent variant (expanded, vanilla, aux_ec)");
        eta_opt = cmd.add_option("--eta", eta, "past-reward blend coefficient");
        cmd.add_option("--seed", seed, "single seed");
        cmd.add_option("--seeds", seeds, "seed list: A..B or comma separated");
        cmd.add_option("--steps", steps, "total environment steps");
        cmd.add_option("--out", out, "output directory");
        cmd.add_option("--warmup", warmup, "uniform-random warmup steps before training");
        cmd.add_option("--eval-interval", eval_interval, "environment steps between evaluations");
        cmd.add_option("--eval-episodes", eval_episodes, "episodes per evaluation point");
        cmd.add_option("--capacity", capacity, "replay buffer / episodic memory capacity");
        cmd.add_option("--jobs", jobs, "max parallel seed jobs (0 = auto)");
        cmd.add_flag("--dump-buffer", dump_buffer, "include the replay buffer in the checkpoint");
    }

    ecsac::RunConfig build() const {
        ecsac::RunConfig cfg;
        if (!config_path.empty()) cfg = ecsac::RunConfig::from_file(config_path);
        if (!env.empty()) cfg.set("env", env);
        if (!variant.empty()) cfg.set("variant", variant);
        if (eta_opt && eta_opt->count() > 0) cfg.agent.eta = eta;
        if (seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed)};
        if (!seeds.empty()) cfg.set("seeds", seeds);
        if (steps >= 0) cfg.total_env_steps = static_cast<std::size_t>(steps);
        if (!out.empty()) cfg.out_dir = out;
        if (warmup >= 0) cfg.warmup_steps = static_cast<std::size_t>(warmup);
        if (eval_interval >= 0) cfg.eval_interval = static_cast<std::size_t>(eval_interval);
        if (eval_episodes >= 0) cfg.eval_episodes = static_cast<std::size_t>(eval_episodes);
        if (capacity >= 0) cfg.capacity = static_cast<std::size_t>(capacity);
        if (jobs >= 0) cfg.jobs = static_cast<unsigned>(jobs);
        if (dump_buffer) cfg.dump_buffer = true;
        return cfg;
    }
};

std::vector<double> parse_real_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(ecsac::detail::parse_real("list", item));
    return out;
}

std::vector<ecsac::Variant> parse_variant_list(const std::string& s) {
    std::vector<ecsac::Variant> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(ecsac::variant_from_name(item));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ecsac: episodic-control soft actor-critic engine"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train one or more seeds");
    CommonFlags train_flags;
    train_flags.attach(*train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with the deterministic policy");
    std::string ckpt_path;
    long long eval_eps = 10, eval_seed = 0;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--episodes", eval_eps, "episodes to average over");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

    auto* sweep_cmd = app.add_subcommand("sweep-eta", "train across a list of eta values");
    CommonFlags sweep_flags;
    sweep_flags.attach(*sweep_cmd);
    std::string etas = "0.0,0.05,0.25,0.5,0.75,1.0";
    sweep_cmd->add_option("--etas", etas, "comma-separated eta values");

    auto* qdiag_cmd = app.add_subcommand("qdiag", "paired Q-estimate series across variants");
    CommonFlags qdiag_flags;
    qdiag_flags.attach(*qdiag_cmd);
    std::string variants = "expanded,aux_ec";
    qdiag_cmd->add_option("--variants", variants, "comma-separated variants (>= 2)");

    auto* spec_cmd = app.add_subcommand("env-spec", "dump an environment spec as JSON");
    std::string spec_env = "pendulum";
    spec_cmd->add_option("--env", spec_env, "environment name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) {
            const auto cfg = train_flags.build();
            const auto out = ecsac::train(cfg);
            for (const auto& run : out.per_seed) {
                std::printf("seed %llu: %zu eval points, final mean eval return %.3f -> %s\n",
                            static_cast<unsigned long long>(run.seed), run.rows.size(),
                            run.final_mean_eval_return, run.run_dir.c_str());
            }
        } else if (eval_cmd->parsed()) {
            const auto res = ecsac::evaluate_checkpoint(ckpt_path, static_cast<std::size_t>(eval_eps),
                                                        static_cast<std::uint64_t>(eval_seed));
            std::printf("episodes %zu  mean %.6f  std %.6f\n", res.returns.size(), res.mean, res.stddev);
            for (std::size_t i = 0; i < res.returns.size(); ++i)
                std::printf("episode %zu: %.6f\n", i, res.returns[i]);
        } else if (sweep_cmd->parsed()) {
            const auto cfg = sweep_flags.build();
            const auto out = ecsac::sweep_eta(cfg, parse_real_list(etas));
            std::printf("eta,best_mean_eval_return,final_mean_eval_return\n");
            for (const auto& row : out.summary)
                std::printf("%g,%.6f,%.6f\n", row.eta, row.best_mean_eval_return,
                            row.final_mean_eval_return);
        } else if (qdiag_cmd->parsed()) {
            const auto cfg = qdiag_flags.build();
            const auto out = ecsac::qdiag_compare(cfg, parse_variant_list(variants));
            std::printf("wrote %s/qdiag.csv (%zu eval points, %zu variants)\n", out.out_dir.c_str(),
                        out.env_steps.size(), out.variants.size());
        } else if (spec_cmd->parsed()) {
            const auto env = ecsac::make_env(spec_env);
            const auto& s = env->spec();
            nlohmann::json j{{"name", s.name},
                             {"state_dim", s.state_dim},
                             {"action_dim", s.action_dim},
                             {"action_low", s.action_low},
                             {"action_high", s.action_high},
                             {"max_episode_steps", s.max_episode_steps},
                             {"reward_range", {s.reward_min, s.reward_max}}};
            std::cout << j.dump(2) << "\n";
        }
    } catch (const ecsac::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const ecsac::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
