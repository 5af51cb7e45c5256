#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ecsac/agent.hpp"
#include "ecsac/errors.hpp"
#include "ecsac/projection.hpp"
#include "ecsac/replay_buffer.hpp"

namespace ecsac {

/// Versioned little-endian binary checkpoint. Doubles are written as their
/// raw 64-bit pattern, so a save/load cycle is bit-exact. Contents: agent
/// configuration, all five networks with Adam moments, temperature state,
/// the projection matrix, step counters, the RNG state, and optionally the
/// replay buffer (episodic memory is rebuilt from it on restore, keys
/// recomputed through the stored projection).
namespace ckpt {

constexpr char kMagic[8] = {'E', 'C', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw ConfigError("cannot open checkpoint for writing: " + path);
    }

    void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
    void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
    void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void f64s(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    bool good() const { return static_cast<bool>(out_); }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw ConfigError("cannot open checkpoint: " + path);
    }

    std::uint8_t u8() {
        std::uint8_t v;
        read(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        read(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        read(&v, 8);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const auto n = u64();
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    std::vector<double> f64s() {
        const auto n = u64();
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }

private:
    void read(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (!in_) throw ConfigError("checkpoint truncated or unreadable");
    }
    std::ifstream in_;
};

inline void write_mlp(Writer& w, const Mlp& net) {
    w.u64(net.layers.size());
    for (const Layer& l : net.layers) {
        w.u64(l.W.rows);
        w.u64(l.W.cols);
        w.u8(l.act == Activation::ReLU ? 1 : 0);
        w.f64s(l.W.data);
        w.f64s(l.b);
    }
}

inline Mlp read_mlp(Reader& r) {
    Mlp net;
    net.layers.resize(r.u64());
    for (Layer& l : net.layers) {
        const auto rows = r.u64();
        const auto cols = r.u64();
        l.act = r.u8() == 1 ? Activation::ReLU : Activation::Identity;
        l.W = Matrix(rows, cols);
        l.W.data = r.f64s();
        l.b = r.f64s();
        if (l.W.data.size() != rows * cols || l.b.size() != rows)
            throw ConfigError("checkpoint: corrupt layer shapes");
    }
    return net;
}

inline void write_adam(Writer& w, const AdamState& s) {
    w.f64(s.lr);
    w.f64(s.beta1);
    w.f64(s.beta2);
    w.f64(s.eps);
    w.u64(s.step);
    w.u64(s.layers.size());
    for (const auto& l : s.layers) {
        w.f64s(l.mW.data);
        w.f64s(l.vW.data);
        w.f64s(l.mb);
        w.f64s(l.vb);
    }
}

inline AdamState read_adam(Reader& r, const Mlp& net) {
    AdamState s = AdamState::make_for(net, 1e-3);
    s.lr = r.f64();
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.eps = r.f64();
    s.step = r.u64();
    if (r.u64() != s.layers.size()) throw ConfigError("checkpoint: adam layer count mismatch");
    for (auto& l : s.layers) {
        l.mW.data = r.f64s();
        l.vW.data = r.f64s();
        l.mb = r.f64s();
        l.vb = r.f64s();
    }
    return s;
}

} // namespace ckpt

/// One stored transition plus the global step at which it was inserted
/// (needed to rebuild episodic memory exactly).
struct DumpedTransition {
    Transition t;
    std::uint64_t global_index = 0;
};

struct Checkpoint {
    std::string env_name;
    AgentConfig agent_cfg;
    std::size_t state_dim = 0;
    std::size_t action_dim = 0;
    std::vector<double> action_low, action_high;
    std::uint64_t env_step = 0;

    // Filled on load; sources on save.
    std::optional<SacAgent> agent;
    std::optional<ProjectionMatrix> projection;
    std::string rng_state;
    std::vector<DumpedTransition> buffer; // empty unless dumped
};

inline void save_checkpoint(const std::string& path, const SacAgent& agent,
                            const ProjectionMatrix& pm, const std::string& env_name,
                            std::uint64_t env_step, const std::string& rng_state,
                            const std::vector<DumpedTransition>* buffer = nullptr) {
    ckpt::Writer w(path);
    for (char c : ckpt::kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(ckpt::kVersion);
    w.str(env_name);

    const AgentConfig& c = agent.cfg;
    w.u8(static_cast<std::uint8_t>(c.variant));
    w.f64(c.eta);
    w.f64(c.gamma);
    w.f64(c.alpha);
    w.u8(c.alpha_mode == AlphaMode::auto_tune ? 1 : 0);
    w.f64(c.tau);
    w.u64(c.K);
    w.u64(c.d);
    w.f64(c.lambda);
    w.u64(c.batch_size);
    w.f64(c.lr);
    w.u64(c.hidden);
    w.f64(c.grad_clip);
    w.u8(c.clip_enabled ? 1 : 0);

    w.u64(agent.state_dim);
    w.u64(agent.action_dim);
    w.f64s(agent.policy.action_low);
    w.f64s(agent.policy.action_high);

    w.u64(pm.source_dim());
    w.u64(pm.target_dim());
    w.u64(pm.seed());
    w.f64s(pm.entries().data);

    ckpt::write_mlp(w, agent.policy.net);
    ckpt::write_adam(w, agent.policy_opt);
    ckpt::write_mlp(w, agent.critic1);
    ckpt::write_adam(w, agent.critic1_opt);
    ckpt::write_mlp(w, agent.critic2);
    ckpt::write_adam(w, agent.critic2_opt);
    ckpt::write_mlp(w, agent.target1);
    ckpt::write_mlp(w, agent.target2);

    w.f64(agent.log_alpha);
    w.f64(agent.alpha_opt.lr);
    w.f64(agent.alpha_opt.m);
    w.f64(agent.alpha_opt.v);
    w.u64(agent.alpha_opt.step);

    w.u64(agent.grad_step_count);
    w.u64(env_step);
    w.str(rng_state);

    w.u8(buffer && !buffer->empty() ? 1 : 0);
    if (buffer && !buffer->empty()) {
        w.u64(buffer->size());
        for (const DumpedTransition& dt : *buffer) {
            w.u64(dt.global_index);
            w.u64(dt.t.episode_id);
            w.u64(dt.t.step_in_episode);
            w.u8(dt.t.done ? 1 : 0);
            w.f64(dt.t.reward);
            w.f64s(dt.t.state);
            w.f64s(dt.t.action);
            w.f64s(dt.t.next_state);
        }
    }
    if (!w.good()) throw ConfigError("failed to write checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    ckpt::Reader r(path);
    char magic[8];
    for (char& m : magic) m = static_cast<char>(r.u8());
    if (std::memcmp(magic, ckpt::kMagic, 8) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    const auto version = r.u32();
    if (version != ckpt::kVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint out;
    out.env_name = r.str();

    AgentConfig c;
    c.variant = static_cast<Variant>(r.u8());
    c.eta = r.f64();
    c.gamma = r.f64();
    c.alpha = r.f64();
    c.alpha_mode = r.u8() == 1 ? AlphaMode::auto_tune : AlphaMode::fixed;
    c.tau = r.f64();
    c.K = r.u64();
    c.d = r.u64();
    c.lambda = r.f64();
    c.batch_size = r.u64();
    c.lr = r.f64();
    c.hidden = r.u64();
    c.grad_clip = r.f64();
    c.clip_enabled = r.u8() == 1;
    out.agent_cfg = c;

    out.state_dim = r.u64();
    out.action_dim = r.u64();
    out.action_low = r.f64s();
    out.action_high = r.f64s();

    const auto src = r.u64();
    const auto tgt = r.u64();
    const auto pseed = r.u64();
    Matrix entries(tgt, src);
    entries.data = r.f64s();
    if (entries.data.size() != tgt * src) throw ConfigError("checkpoint: corrupt projection");
    out.projection.emplace(std::move(entries), pseed);

    Rng scratch(0);
    SacAgent agent(out.state_dim, out.action_dim, out.action_low, out.action_high, c, scratch);
    agent.policy.net = ckpt::read_mlp(r);
    agent.policy_opt = ckpt::read_adam(r, agent.policy.net);
    agent.critic1 = ckpt::read_mlp(r);
    agent.critic1_opt = ckpt::read_adam(r, agent.critic1);
    agent.critic2 = ckpt::read_mlp(r);
    agent.critic2_opt = ckpt::read_adam(r, agent.critic2);
    agent.target1 = ckpt::read_mlp(r);
    agent.target2 = ckpt::read_mlp(r);

    agent.log_alpha = r.f64();
    agent.alpha_opt.lr = r.f64();
    agent.alpha_opt.m = r.f64();
    agent.alpha_opt.v = r.f64();
    agent.alpha_opt.step = r.u64();

    agent.grad_step_count = r.u64();
    out.env_step = r.u64();
    out.rng_state = r.str();
    out.agent.emplace(std::move(agent));

    if (r.u8() == 1) {
        const auto n = r.u64();
        out.buffer.resize(n);
        for (auto& dt : out.buffer) {
            dt.global_index = r.u64();
            dt.t.episode_id = r.u64();
            dt.t.step_in_episode = r.u64();
            dt.t.done = r.u8() == 1;
            dt.t.reward = r.f64();
            dt.t.state = r.f64s();
            dt.t.action = r.f64s();
            dt.t.next_state = r.f64s();
        }
    }
    return out;
}

/// Rebuild both stores from a dumped buffer: replay contents verbatim,
/// episodic keys recomputed through the stored projection.
inline void rebuild_stores(const Checkpoint& ck, ReplayBuffer& buffer, EpisodicStore& store) {
    for (const DumpedTransition& dt : ck.buffer) {
        buffer.push(dt.t);
        const auto key = ck.projection->project(dt.t.state, dt.t.action);
        store.insert(dt.t, key, dt.global_index);
    }
}

} // namespace ecsac
