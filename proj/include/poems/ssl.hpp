#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "poems/matrix.hpp"

namespace poems {

/// Sparse feature-to-factor loadings for one omic: W is D_v x K, row j masks
/// which latent factors reach feature j.
struct FactorLoadings {
    std::string omic;
    Matrix w;
};

/// Spike-and-Slab Lasso prior state: mixture of two Laplace densities with
/// Bernoulli inclusion probabilities gamma and Beta-Bernoulli column rates eta.
struct SSLState {
    Matrix gamma;            // D_v x K inclusion probabilities
    std::vector<double> eta; // length K, column-wise slab rates
    double lambda0 = 10.0;   // spike scale
    double lambda1 = 1.0;    // slab scale (lambda0 >= lambda1 > 0)
    double a = 1.0;          // Beta prior
    double b = 1.0;

    void validate() const {
        // Equality is allowed so the spike-equals-slab degenerate limit stays
        // expressible (it reduces the model to a plain gated-PoE VAE).
        if (!(lambda0 >= lambda1) || !(lambda1 > 0.0))
            throw contract_error("SSLState: need lambda0 >= lambda1 > 0");
        if (a < 1.0 || b < 1.0) throw contract_error("SSLState: need a, b >= 1");
    }
};

inline SSLState init_ssl_state(std::size_t d, std::size_t k, double lambda0, double lambda1,
                               double a, double b) {
    SSLState s;
    s.gamma = Matrix(d, k, 0.5);
    s.eta.assign(k, 0.5);
    s.lambda0 = lambda0;
    s.lambda1 = lambda1;
    s.a = a;
    s.b = b;
    s.validate();
    return s;
}

inline FactorLoadings init_loadings(const std::string& omic, std::size_t d, std::size_t k,
                                    Rng& rng) {
    return FactorLoadings{omic, random_uniform(d, k, -0.1, 0.1, rng)};
}

constexpr double kEtaClamp = 1e-6;

/// log of the Laplace density psi_lambda(w) = (lambda/2) exp(-lambda |w|).
inline double log_laplace(double w, double lambda) {
    return std::log(0.5 * lambda) - lambda * std::abs(w);
}

/// E-step: gamma_jk = eta_k psi_l1(w) / (eta_k psi_l1(w) + (1-eta_k) psi_l0(w)),
/// evaluated in log space so extreme |w| cannot underflow the ratio.
inline void ssl_gamma_update(const FactorLoadings& loadings, SSLState& state) {
    state.validate();
    const Matrix& w = loadings.w;
    if (!state.gamma.same_shape(w)) throw contract_error("ssl_gamma_update: gamma/W shape mismatch");
    for (std::size_t j = 0; j < w.rows; ++j) {
        for (std::size_t k = 0; k < w.cols; ++k) {
            const double eta = state.eta[k];
            const double t = (std::log1p(-eta) - std::log(eta)) +
                             (log_laplace(w(j, k), state.lambda0) -
                              log_laplace(w(j, k), state.lambda1));
            // gamma = sigmoid(-t)
            state.gamma(j, k) = t >= 0.0 ? std::exp(-t) / (1.0 + std::exp(-t))
                                         : 1.0 / (1.0 + std::exp(t));
        }
    }
}

/// M-step posterior mode of the Beta-Bernoulli rate, clamped away from {0,1}.
inline void ssl_eta_update(SSLState& state, std::size_t d) {
    const double denom = state.a + state.b + static_cast<double>(d) - 2.0;
    if (!(denom > 0.0)) throw contract_error("ssl_eta_update: a + b + D - 2 must be positive");
    for (std::size_t k = 0; k < state.eta.size(); ++k) {
        double col = 0.0;
        for (std::size_t j = 0; j < d; ++j) col += state.gamma(j, k);
        double eta = (state.a - 1.0 + col) / denom;
        state.eta[k] = std::min(1.0 - kEtaClamp, std::max(kEtaClamp, eta));
    }
}

/// Gradient of -log prior w.r.t. W under the current inclusion probabilities:
/// lambda*(w) sign(w) with lambda* = gamma lambda1 + (1-gamma) lambda0.
/// sign(0) = 0 by the subgradient convention.
inline Matrix ssl_penalty_grad(const FactorLoadings& loadings, const SSLState& state) {
    const Matrix& w = loadings.w;
    if (!state.gamma.same_shape(w)) throw contract_error("ssl_penalty_grad: gamma/W shape mismatch");
    Matrix g(w.rows, w.cols);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gamma = state.gamma.data[i];
        const double lstar = gamma * state.lambda1 + (1.0 - gamma) * state.lambda0;
        const double wi = w.data[i];
        g.data[i] = wi > 0.0 ? lstar : (wi < 0.0 ? -lstar : 0.0);
    }
    return g;
}

/// -log of the marginal mixture prior given eta, summed over entries. Its
/// exact derivative is ssl_penalty_grad with gamma at the E-step value, so
/// the loss and its gradient stay consistent under finite differences.
inline double ssl_penalty_value(const FactorLoadings& loadings, const SSLState& state) {
    const Matrix& w = loadings.w;
    double total = 0.0;
    for (std::size_t j = 0; j < w.rows; ++j) {
        for (std::size_t k = 0; k < w.cols; ++k) {
            const double eta = state.eta[k];
            const double l1 = std::log(eta) + log_laplace(w(j, k), state.lambda1);
            const double l0 = std::log1p(-eta) + log_laplace(w(j, k), state.lambda0);
            const double hi = std::max(l1, l0);
            total -= hi + std::log(std::exp(l1 - hi) + std::exp(l0 - hi));
        }
    }
    return total;
}

/// Alternates E (gamma) and M (eta) steps at fixed W until eta is stationary.
/// Running the block to convergence keeps the prior state a pure function of
/// W, so frozen weights imply a frozen penalty.
inline void ssl_em_converge(const FactorLoadings& loadings, SSLState& state,
                            std::size_t max_iters = 500, double tol = 1e-10) {
    const std::size_t d = loadings.w.rows;
    for (std::size_t it = 0; it < max_iters; ++it) {
        const std::vector<double> before = state.eta;
        ssl_gamma_update(loadings, state);
        ssl_eta_update(state, d);
        double delta = 0.0;
        for (std::size_t k = 0; k < state.eta.size(); ++k)
            delta = std::max(delta, std::abs(state.eta[k] - before[k]));
        if (delta < tol) return;
    }
}

/// Entry (j,k) is active iff |w_jk| > threshold (strict).
inline Matrix active_map(const FactorLoadings& loadings, double threshold) {
    if (threshold < 0.0) throw contract_error("active_map: threshold must be >= 0");
    Matrix m(loadings.w.rows, loadings.w.cols);
    for (std::size_t i = 0; i < m.size(); ++i)
        m.data[i] = std::abs(loadings.w.data[i]) > threshold ? 1.0 : 0.0;
    return m;
}

} // namespace poems
