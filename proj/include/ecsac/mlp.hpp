#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/matrix.hpp"
#include "ecsac/rng.hpp"

namespace ecsac {

enum class Activation { ReLU, Identity };

/// One dense layer: y = x * W^T + b, optionally through ReLU.
/// W is stored out x in.
struct Layer {
    Matrix W;
    std::vector<double> b;
    Activation act = Activation::Identity;

    std::size_t in_dim() const { return W.cols; }
    std::size_t out_dim() const { return W.rows; }
};

/// Fixed-topology dense feed-forward network. No general computation graph:
/// the backward pass below is hand-derived for exactly this structure.
struct Mlp {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.back().out_dim(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }

    /// Weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    /// drawn from the run's seeded stream in a fixed order.
    static Mlp make(const std::vector<std::size_t>& sizes,
                    const std::vector<Activation>& acts, Rng& rng) {
        if (sizes.size() < 2 || acts.size() != sizes.size() - 1)
            throw ConfigError("Mlp::make: sizes/activations mismatch");
        Mlp net;
        net.layers.resize(sizes.size() - 1);
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            Layer& layer = net.layers[l];
            layer.W = Matrix(sizes[l + 1], sizes[l]);
            layer.b.assign(sizes[l + 1], 0.0);
            layer.act = acts[l];
            const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
            for (double& w : layer.W.data) w = rng.uniform(-bound, bound);
            for (double& b : layer.b) b = rng.uniform(-bound, bound);
        }
        return net;
    }

    /// Two hidden ReLU layers of width `hidden`, identity head.
    static Mlp make_two_hidden(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
        return make({in, hidden, hidden, out},
                    {Activation::ReLU, Activation::ReLU, Activation::Identity}, rng);
    }

    void for_each_param(const std::function<void(double&)>& f) {
        for (auto& l : layers) {
            for (double& w : l.W.data) f(w);
            for (double& b : l.b) f(b);
        }
    }

    bool all_finite() const {
        for (const auto& l : layers) {
            if (!l.W.all_finite()) return false;
            for (double b : l.b)
                if (!std::isfinite(b)) return false;
        }
        return true;
    }
};

/// Forward intermediates needed by the backward pass. Single use.
struct GradientTape {
    Matrix input;
    std::vector<Matrix> pre_act;  // z_l per layer
    std::vector<Matrix> post_act; // act(z_l) per layer
    bool consumed = false;
};

struct LayerGrads {
    Matrix dW;
    std::vector<double> db;
};

struct MlpGradients {
    std::vector<LayerGrads> layers;
    Matrix input_grad;

    bool all_finite() const {
        for (const auto& l : layers) {
            if (!l.dW.all_finite()) return false;
            for (double v : l.db)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

/// Batched forward pass; input is batch x in_dim. Pass a tape to record the
/// intermediates required by mlp_backward.
inline Matrix mlp_forward(const Mlp& net, const Matrix& input, GradientTape* tape = nullptr) {
    if (input.cols != net.input_dim())
        throw ConfigError("mlp_forward: input width does not match first layer");
    if (tape) {
        tape->input = input;
        tape->pre_act.clear();
        tape->post_act.clear();
        tape->consumed = false;
    }
    Matrix x = input;
    for (const auto& layer : net.layers) {
        Matrix z = matmul_nt(x, layer.W);
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* row = z.row_ptr(i);
            for (std::size_t j = 0; j < z.cols; ++j) row[j] += layer.b[j];
        }
        if (tape) tape->pre_act.push_back(z);
        if (layer.act == Activation::ReLU) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        if (tape) tape->post_act.push_back(z);
        x = std::move(z);
    }
    return x;
}

namespace detail {

inline Matrix backprop_through_layers(const Mlp& net, GradientTape& tape,
                                      const Matrix& output_grad, MlpGradients* grads) {
    if (tape.consumed) throw UsageError("mlp_backward: tape already consumed");
    if (output_grad.rows != tape.input.rows || output_grad.cols != net.output_dim())
        throw ConfigError("mlp_backward: output_grad shape mismatch");
    tape.consumed = true;

    if (grads) grads->layers.resize(net.layers.size());
    Matrix delta = output_grad;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& layer = net.layers[li];
        if (layer.act == Activation::ReLU) {
            const Matrix& z = tape.pre_act[li];
            for (std::size_t k = 0; k < delta.data.size(); ++k)
                if (z.data[k] <= 0.0) delta.data[k] = 0.0;
        }
        if (grads) {
            const Matrix& below = li == 0 ? tape.input : tape.post_act[li - 1];
            LayerGrads& lg = grads->layers[li];
            lg.dW = matmul_tn(delta, below);
            lg.db.assign(layer.out_dim(), 0.0);
            for (std::size_t i = 0; i < delta.rows; ++i) {
                const double* row = delta.row_ptr(i);
                for (std::size_t j = 0; j < delta.cols; ++j) lg.db[j] += row[j];
            }
        }
        delta = matmul_nn(delta, layer.W);
    }
    return delta;
}

} // namespace detail

/// Full backward pass: parameter gradients (shapes mirror the parameters)
/// plus the gradient with respect to the forward input.
inline MlpGradients mlp_backward(const Mlp& net, GradientTape& tape, const Matrix& output_grad) {
    MlpGradients grads;
    grads.input_grad = detail::backprop_through_layers(net, tape, output_grad, &grads);
    return grads;
}

/// Input gradient only; skips the dW/db products. Used when a network is
/// held fixed but gradients must flow through it (actor loss through Q).
inline Matrix mlp_backward_input_only(const Mlp& net, GradientTape& tape, const Matrix& output_grad) {
    return detail::backprop_through_layers(net, tape, output_grad, nullptr);
}

} // namespace ecsac
