#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/mlp.hpp"

namespace ecsac {

/// Adam moments for one Mlp; moment shapes mirror the parameter shapes.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;

    struct LayerMoments {
        Matrix mW, vW;
        std::vector<double> mb, vb;
    };
    std::vector<LayerMoments> layers;

    static AdamState make_for(const Mlp& net, double lr) {
        AdamState s;
        s.lr = lr;
        s.layers.resize(net.layers.size());
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            const Layer& layer = net.layers[l];
            s.layers[l].mW = Matrix(layer.W.rows, layer.W.cols);
            s.layers[l].vW = Matrix(layer.W.rows, layer.W.cols);
            s.layers[l].mb.assign(layer.b.size(), 0.0);
            s.layers[l].vb.assign(layer.b.size(), 0.0);
        }
        return s;
    }
};

namespace detail {

inline void adam_update(double& param, double& m, double& v, double g,
                        const AdamState& s, double bc1, double bc2) {
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
}

} // namespace detail

/// One Adam step with bias correction. Throws DivergenceError if any
/// gradient entry is non-finite; lr == 0 leaves the parameters untouched
/// while still advancing the moments and step counter.
inline void adam_step(AdamState& state, Mlp& net, const MlpGradients& grads) {
    if (grads.layers.size() != net.layers.size())
        throw ConfigError("adam_step: gradient/parameter layer count mismatch");
    if (!grads.all_finite())
        throw DivergenceError("adam_step: non-finite gradient entry");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Layer& layer = net.layers[l];
        const LayerGrads& lg = grads.layers[l];
        AdamState::LayerMoments& mo = state.layers[l];
        if (lg.dW.rows != layer.W.rows || lg.dW.cols != layer.W.cols || lg.db.size() != layer.b.size())
            throw ConfigError("adam_step: gradient shape mismatch");
        for (std::size_t k = 0; k < layer.W.data.size(); ++k)
            detail::adam_update(layer.W.data[k], mo.mW.data[k], mo.vW.data[k], lg.dW.data[k], state, bc1, bc2);
        for (std::size_t k = 0; k < layer.b.size(); ++k)
            detail::adam_update(layer.b[k], mo.mb[k], mo.vb[k], lg.db[k], state, bc1, bc2);
    }
}

/// Adam on a single scalar (the entropy temperature's log-alpha).
struct ScalarAdam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double m = 0.0;
    double v = 0.0;
    std::uint64_t step = 0;

    void update(double& param, double g) {
        if (!std::isfinite(g)) throw DivergenceError("ScalarAdam: non-finite gradient");
        step += 1;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        param -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
};

/// Global-norm gradient clip across one network's parameter gradients.
/// Returns the pre-clip norm.
inline double clip_global_norm(MlpGradients& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& lg : grads.layers) {
        for (double g : lg.dW.data) sq += g * g;
        for (double g : lg.db) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& lg : grads.layers) {
            for (double& g : lg.dW.data) g *= scale;
            for (double& g : lg.db) g *= scale;
        }
    }
    return norm;
}

} // namespace ecsac
