#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "poems/matrix.hpp"

namespace poems {

/// Named handle to one parameter tensor and its gradient accumulator.
struct ParamRef {
    std::string name;
    Matrix* value = nullptr;
    Matrix* grad = nullptr;
};

using ParamSet = std::vector<ParamRef>;

inline void zero_grads(ParamSet& params) {
    for (auto& p : params) p.grad->fill(0.0);
}

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// First/second moments per parameter, in ParamSet order.
struct OptState {
    AdamWConfig hp;
    long t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

inline OptState init_opt_state(const ParamSet& params, const AdamWConfig& hp) {
    // lr = 0 is legal: it freezes parameters, which the training-loop
    // early-stop contract exercises deliberately.
    if (!(hp.lr >= 0.0) || hp.beta1 < 0.0 || hp.beta1 >= 1.0 || hp.beta2 < 0.0 || hp.beta2 >= 1.0)
        throw contract_error("init_opt_state: invalid AdamW hyperparameters");
    OptState s;
    s.hp = hp;
    for (const auto& p : params) {
        s.m.emplace_back(p.value->rows, p.value->cols);
        s.v.emplace_back(p.value->rows, p.value->cols);
    }
    return s;
}

/// One AdamW update. Weight decay is decoupled: it enters the update
/// directly and never touches the gradient moments.
inline void adamw_step(ParamSet& params, OptState& state) {
    if (state.m.size() != params.size())
        throw contract_error("adamw_step: state does not match parameter set");
    state.t += 1;
    const auto& hp = state.hp;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& theta = *params[pi].value;
        const Matrix& g = *params[pi].grad;
        if (!g.same_shape(theta))
            throw contract_error("adamw_step: grad shape mismatch for " + params[pi].name);
        Matrix& m = state.m[pi];
        Matrix& v = state.v[pi];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g.data[i];
            if (!std::isfinite(gi))
                throw numeric_error("adamw_step: non-finite gradient in " + params[pi].name);
            m.data[i] = hp.beta1 * m.data[i] + (1.0 - hp.beta1) * gi;
            v.data[i] = hp.beta2 * v.data[i] + (1.0 - hp.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            theta.data[i] -=
                hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * theta.data[i]);
        }
    }
}

} // namespace poems
