#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "poems/matrix.hpp"

namespace poems {

enum class Activation { relu, tanh, identity };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        default: return "identity";
    }
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw contract_error("unknown activation: " + s);
}

/// weight is in_dim x out_dim, bias 1 x out_dim.
struct DenseLayer {
    Matrix weight;
    Matrix bias;
    Activation act = Activation::identity;
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().weight.rows; }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().weight.cols; }
};

/// Glorot-uniform weights, zero biases. `dims` = {in, hidden..., out};
/// hidden layers use `hidden_act`, the final layer is identity.
inline MlpParams init_mlp(const std::vector<std::size_t>& dims, Rng& rng,
                          Activation hidden_act = Activation::relu) {
    if (dims.size() < 2) throw contract_error("init_mlp: need at least input and output dims");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        layer.weight = random_uniform(dims[l], dims[l + 1], -bound, bound, rng);
        layer.bias = Matrix(1, dims[l + 1]);
        layer.act = (l + 2 == dims.size()) ? Activation::identity : hidden_act;
        p.layers.push_back(std::move(layer));
    }
    return p;
}

inline MlpParams zeros_like(const MlpParams& p) {
    MlpParams g;
    g.layers.reserve(p.layers.size());
    for (const auto& l : p.layers)
        g.layers.push_back({Matrix(l.weight.rows, l.weight.cols), Matrix(1, l.bias.cols), l.act});
    return g;
}

/// Per-layer activations a_0 (the input) through a_L (the output); enough to
/// run the exact backward pass.
struct MlpCache {
    std::vector<Matrix> act;
};

inline void apply_activation(Matrix& m, Activation a) {
    switch (a) {
        case Activation::relu:
            for (double& v : m.data) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::tanh:
            for (double& v : m.data) v = std::tanh(v);
            break;
        case Activation::identity:
            break;
    }
}

/// Derivative expressed through the post-activation value.
inline double activation_deriv(double post, Activation a) {
    switch (a) {
        case Activation::relu: return post > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - post * post;
        default: return 1.0;
    }
}

inline Matrix mlp_forward(const MlpParams& params, const Matrix& input, MlpCache* cache = nullptr) {
    if (params.layers.empty()) throw contract_error("mlp_forward: empty network");
    if (input.cols != params.in_dim())
        throw shape_error("mlp_forward: input " + shape_str(input) + " vs in_dim " +
                          std::to_string(params.in_dim()));
    if (cache) {
        cache->act.clear();
        cache->act.reserve(params.layers.size() + 1);
        cache->act.push_back(input);
        for (const auto& layer : params.layers) {
            Matrix next;
            matmul(cache->act.back(), layer.weight, next);
            add_rowvec_inplace(next, layer.bias);
            apply_activation(next, layer.act);
            cache->act.push_back(std::move(next));
        }
        return cache->act.back();
    }
    // Cache-free path ping-pongs two buffers; no input copy. Matters when the
    // decoder trunk runs over the N*D masked-latent stack.
    Matrix bufs[2];
    const Matrix* src = &input;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Matrix& dst = bufs[l % 2];
        matmul(*src, params.layers[l].weight, dst);
        add_rowvec_inplace(dst, params.layers[l].bias);
        apply_activation(dst, params.layers[l].act);
        src = &dst;
    }
    return std::move(bufs[(params.layers.size() - 1) % 2]);
}

/// Gradients of a scalar whose gradient w.r.t. the output is `output_grad`.
/// Returns the gradient w.r.t. the input; parameter gradients are accumulated
/// into `param_grads` (shapes must already match).
inline Matrix mlp_backward(const MlpParams& params, const MlpCache& cache,
                           const Matrix& output_grad, MlpParams& param_grads) {
    const std::size_t n_layers = params.layers.size();
    if (cache.act.size() != n_layers + 1)
        throw contract_error("mlp_backward: cache does not match network depth");
    if (!output_grad.same_shape(cache.act.back()))
        throw contract_error("mlp_backward: output_grad shape " + shape_str(output_grad) +
                             " vs cached output " + shape_str(cache.act.back()));
    if (param_grads.layers.size() != n_layers)
        throw contract_error("mlp_backward: grad container does not match network");

    Matrix delta = output_grad;
    for (std::size_t li = n_layers; li-- > 0;) {
        const DenseLayer& layer = params.layers[li];
        const Matrix& post = cache.act[li + 1];
        if (layer.act != Activation::identity) {
            for (std::size_t i = 0; i < delta.size(); ++i)
                delta.data[i] *= activation_deriv(post.data[i], layer.act);
        }
        add_inplace(param_grads.layers[li].weight, matmul_tn(cache.act[li], delta));
        add_inplace(param_grads.layers[li].bias, colsum(delta));
        if (li > 0) delta = matmul_nt(delta, layer.weight);
    }
    return matmul_nt(delta, params.layers[0].weight);
}

} // namespace poems
