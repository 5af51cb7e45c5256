#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ecsac/agent.hpp"
#include "ecsac/envs.hpp"
#include "ecsac/errors.hpp"

namespace ecsac {

/// Everything one run needs. Defaults mirror the production hyperparameters;
/// a flat `key = value` config file and CLI flags override them (flags win).
struct RunConfig {
    std::string env = "pendulum";
    AgentConfig agent;
    std::size_t total_env_steps = 100000;
    std::size_t eval_interval = 1000;
    std::size_t eval_episodes = 10;
    std::size_t warmup_steps = 1000;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::string out_dir = "runs/out";
    std::size_t capacity = 100000;      // replay buffer AND episodic memory
    std::size_t projection_dim = 10;
    std::size_t probe_count = 128;      // Q-diagnostic probe states
    bool dump_buffer = false;
    unsigned jobs = 0;                  // parallel seed jobs; 0 = auto

    void validate() const {
        make_env(env); // throws ConfigError for unknown names
        agent.validate();
        if (eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
        if (eval_episodes == 0) throw ConfigError("eval_episodes must be >= 1");
        if (capacity == 0) throw ConfigError("capacity must be >= 1");
        if (projection_dim == 0) throw ConfigError("projection_dim must be >= 1");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    }

    void set(const std::string& key, const std::string& value);

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        RunConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
                continue;
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
            cfg.set(key, value);
        }
        return cfg;
    }

    /// The effective configuration, echoed back in the file format.
    std::string echo() const;
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size() || x < 0) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("bad non-negative integer for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

/// "3" -> {3}; "0..9" -> {0,...,9}; "0,2,5" -> {0,2,5}.
inline std::vector<std::uint64_t> parse_seeds(const std::string& v) {
    std::vector<std::uint64_t> out;
    const auto dots = v.find("..");
    if (dots != std::string::npos) {
        const auto lo = parse_uint("seeds", v.substr(0, dots));
        const auto hi = parse_uint("seeds", v.substr(dots + 2));
        if (hi < lo) throw ConfigError("bad seed range: '" + v + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_uint("seeds", item));
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

} // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_real;
    using detail::parse_uint;
    if (key == "env") env = value;
    else if (key == "variant") agent.variant = variant_from_name(value);
    else if (key == "eta") agent.eta = parse_real(key, value);
    else if (key == "gamma") agent.gamma = parse_real(key, value);
    else if (key == "alpha") agent.alpha = parse_real(key, value);
    else if (key == "alpha_mode") {
        if (value == "fixed") agent.alpha_mode = AlphaMode::fixed;
        else if (value == "auto") agent.alpha_mode = AlphaMode::auto_tune;
        else throw ConfigError("alpha_mode must be fixed or auto");
    }
    else if (key == "tau") agent.tau = parse_real(key, value);
    else if (key == "k") agent.K = parse_uint(key, value);
    else if (key == "d") agent.d = parse_uint(key, value);
    else if (key == "lambda") agent.lambda = parse_real(key, value);
    else if (key == "batch_size") agent.batch_size = parse_uint(key, value);
    else if (key == "lr") agent.lr = parse_real(key, value);
    else if (key == "hidden") agent.hidden = parse_uint(key, value);
    else if (key == "grad_clip") {
        if (value == "off") agent.clip_enabled = false;
        else {
            agent.clip_enabled = true;
            agent.grad_clip = parse_real(key, value);
        }
    }
    else if (key == "total_env_steps") total_env_steps = parse_uint(key, value);
    else if (key == "eval_interval") eval_interval = parse_uint(key, value);
    else if (key == "eval_episodes") eval_episodes = parse_uint(key, value);
    else if (key == "warmup_steps") warmup_steps = parse_uint(key, value);
    else if (key == "seeds") seeds = detail::parse_seeds(value);
    else if (key == "out_dir") out_dir = value;
    else if (key == "capacity") capacity = parse_uint(key, value);
    else if (key == "projection_dim") projection_dim = parse_uint(key, value);
    else if (key == "probe_count") probe_count = parse_uint(key, value);
    else if (key == "dump_buffer") dump_buffer = parse_bool(key, value);
    else if (key == "jobs") jobs = static_cast<unsigned>(parse_uint(key, value));
    else throw ConfigError("unknown config key: " + key);
}

inline std::string RunConfig::echo() const {
    std::ostringstream os;
    auto real = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << "env = " << env << "\n";
    os << "variant = " << variant_name(agent.variant) << "\n";
    os << "eta = " << real(agent.eta) << "\n";
    os << "gamma = " << real(agent.gamma) << "\n";
    os << "alpha = " << real(agent.alpha) << "\n";
    os << "alpha_mode = " << (agent.alpha_mode == AlphaMode::fixed ? "fixed" : "auto") << "\n";
    os << "tau = " << real(agent.tau) << "\n";
    os << "k = " << agent.K << "\n";
    os << "d = " << agent.d << "\n";
    os << "lambda = " << real(agent.lambda) << "\n";
    os << "batch_size = " << agent.batch_size << "\n";
    os << "lr = " << real(agent.lr) << "\n";
    os << "hidden = " << agent.hidden << "\n";
    os << "grad_clip = " << (agent.clip_enabled ? real(agent.grad_clip) : std::string("off")) << "\n";
    os << "total_env_steps = " << total_env_steps << "\n";
    os << "eval_interval = " << eval_interval << "\n";
    os << "eval_episodes = " << eval_episodes << "\n";
    os << "warmup_steps = " << warmup_steps << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "capacity = " << capacity << "\n";
    os << "projection_dim = " << projection_dim << "\n";
    os << "probe_count = " << probe_count << "\n";
    os << "dump_buffer = " << (dump_buffer ? "true" : "false") << "\n";
    os << "jobs = " << jobs << "\n";
    return os.str();
}

} // namespace ecsac
