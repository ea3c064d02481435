#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "poems/data.hpp"
#include "poems/model.hpp"
#include "poems/optim.hpp"
#include "poems/ssl.hpp"

namespace poems {

struct LossBreakdown {
    std::vector<double> recon;   // per-omic reconstruction NLL, per-sample average
    double kl = 0.0;             // shared fused-posterior KL, per-sample average
    std::vector<double> penalty; // per-omic SSL penalty value (not batch-scaled)
    double total = 0.0;

    void retotal() {
        total = kl;
        for (double r : recon) total += r;
        for (double p : penalty) total += p;
    }
};

struct TrainConfig {
    std::size_t epochs = 5000;
    std::size_t batch_size = 512;
    double lr = 9e-4;
    double weight_decay = 1e-4;
    std::size_t patience = 100;
    std::uint64_t seed = 21;
    ModelConfig model{};
    double ssl_lambda0 = 10.0;
    double ssl_lambda1 = 1.0;
    double ssl_a = 1.0;
    double ssl_b = 1.0;

    void validate() const {
        if (epochs == 0) throw contract_error("TrainConfig: epochs must be > 0");
        if (model.latent_dim == 0) throw contract_error("TrainConfig: latent_dim must be > 0");
        if (batch_size == 0) throw contract_error("TrainConfig: batch_size must be > 0");
        if (patience == 0) throw contract_error("TrainConfig: patience must be >= 1");
        if (!(lr >= 0.0) || !(weight_decay >= 0.0))
            throw contract_error("TrainConfig: lr and weight_decay must be >= 0");
    }
};

struct EpochRecord {
    LossBreakdown train;
    LossBreakdown val;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0; // index into epochs
    std::string stop_reason;
};

struct TrainResult {
    ModelParams model;
    std::vector<SSLState> ssl;
    TrainHistory history;
};

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// -sum_j log N(x_nj; recon_nj, var_j), averaged over samples. var is a
/// 1 x D row of per-feature variances.
inline double gaussian_nll(const Matrix& recon, const Matrix& x, const Matrix& var) {
    if (!recon.same_shape(x))
        throw shape_error("gaussian_nll: recon " + shape_str(recon) + " vs x " + shape_str(x));
    if (var.rows != 1 || var.cols != x.cols)
        throw shape_error("gaussian_nll: variance must be 1 x D");
    if (x.rows == 0) throw contract_error("gaussian_nll: empty batch");
    constexpr double kLog2Pi = 1.8378770664093454836;
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
        const double v = var.data[j];
        if (!(v > 0.0)) throw contract_error("gaussian_nll: non-positive variance");
        double sq = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double r = x(i, j) - recon(i, j);
            sq += r * r;
        }
        total += 0.5 * static_cast<double>(x.rows) * (kLog2Pi + std::log(v)) + sq / (2.0 * v);
    }
    return total / static_cast<double>(x.rows);
}

inline double gaussian_nll(const Matrix& recon, const Matrix& x, double obs_variance) {
    Matrix var(1, x.cols);
    var.fill(obs_variance);
    return gaussian_nll(recon, x, var);
}

/// KL(q || N(0, I)) per sample: 1/2 sum_k (var + mean^2 - 1 - ln var),
/// averaged over the batch. Nonnegative.
inline double kl_standard_normal(const FusedPosterior& fused) {
    if (fused.mean.rows == 0) throw contract_error("kl_standard_normal: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < fused.mean.size(); ++i) {
        const double v = fused.var.data[i];
        const double m = fused.mean.data[i];
        total += 0.5 * (v + m * m - 1.0 - std::log(v));
    }
    return total / static_cast<double>(fused.mean.rows);
}

// ---------------------------------------------------------------------------
// One loss evaluation over a batch, optionally with the full backward pass
// ---------------------------------------------------------------------------

/// Forward: encode -> gate -> poe_fuse -> reparameterize (given noise) ->
/// sparse_decode per omic, plus the SSL penalty values. With grads != nullptr
/// the exact analytic gradients of the total are accumulated into grads,
/// including an E-step refresh of each gamma so the penalty subgradient
/// matches the penalty value at the current eta. eta itself never moves here.
inline LossBreakdown elbo_step(const std::vector<Matrix>& x, ModelParams& params,
                               std::vector<SSLState>& ssl, const Matrix& noise,
                               ModelParams* grads) {
    const std::size_t v_count = params.omics.size();
    if (x.size() != v_count) throw contract_error("elbo_step: batch/modality count mismatch");
    if (v_count == 0) throw contract_error("elbo_step: no modalities");
    if (ssl.size() != v_count) throw contract_error("elbo_step: ssl state count mismatch");
    const std::size_t n = x[0].rows;
    if (n == 0) throw contract_error("elbo_step: empty batch");
    const std::size_t k = params.config.latent_dim;
    for (std::size_t v = 0; v < v_count; ++v) {
        if (x[v].rows != n) throw shape_error("elbo_step: batches not aligned across omics");
        if (x[v].cols != params.omics[v].n_features)
            throw shape_error("elbo_step: feature count mismatch for omic " +
                              params.omics[v].name);
    }
    if (noise.rows != n || noise.cols != k) throw shape_error("elbo_step: noise must be N x K");

    const bool with_grads = grads != nullptr;
    const double clamp = params.config.logvar_clamp;

    std::vector<ModalityPosterior> posts(v_count);
    std::vector<EncodeCache> enc_caches(v_count);
    for (std::size_t v = 0; v < v_count; ++v)
        posts[v] = encode(x[v], params.omics[v].encoder, clamp, params.omics[v].name,
                          with_grads ? &enc_caches[v] : nullptr);

    GateCache gate_cache;
    GatingWeights alphas = gate(posts, params.gating, with_grads ? &gate_cache : nullptr);

    PoeCache poe_cache;
    FusedPosterior fused = poe_fuse(posts, alphas, &poe_cache);
    LatentSample latent = reparameterize(fused, noise);

    LossBreakdown lb;
    lb.recon.resize(v_count);
    lb.penalty.resize(v_count);
    std::vector<Matrix> recons(v_count);
    std::vector<DecodeCache> dec_caches(v_count);
    std::vector<Matrix> obs_var(v_count);
    for (std::size_t v = 0; v < v_count; ++v) {
        const OmicParams& op = params.omics[v];
        recons[v] = sparse_decode(latent.z, op.loadings, op.decoder, op.decoder_bias,
                                  with_grads ? &dec_caches[v] : nullptr);
        obs_var[v] = Matrix(1, op.n_features);
        if (params.config.learn_obs_variance) {
            for (std::size_t j = 0; j < op.n_features; ++j)
                obs_var[v].data[j] = std::exp(op.obs_logvar.data[j]);
        } else {
            obs_var[v].fill(1.0);
        }
        lb.recon[v] = gaussian_nll(recons[v], x[v], obs_var[v]);
        if (!std::isfinite(lb.recon[v]))
            throw numeric_error("elbo_step: non-finite reconstruction NLL for omic " + op.name);
        lb.penalty[v] = ssl_penalty_value(op.loadings, ssl[v]);
        if (!std::isfinite(lb.penalty[v]))
            throw numeric_error("elbo_step: non-finite SSL penalty for omic " + op.name);
    }
    lb.kl = kl_standard_normal(fused);
    if (!std::isfinite(lb.kl)) throw numeric_error("elbo_step: non-finite KL term");
    lb.retotal();
    if (!with_grads) return lb;

    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix dz(n, k);
    for (std::size_t v = 0; v < v_count; ++v) {
        OmicParams& op = params.omics[v];
        OmicParams& og = grads->omics[v];
        Matrix drecon(n, op.n_features);
        for (std::size_t j = 0; j < op.n_features; ++j) {
            const double var = obs_var[v].data[j];
            double dlv = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = recons[v](i, j) - x[v](i, j);
                drecon(i, j) = r / var * inv_n;
                dlv += 0.5 - r * r / (2.0 * var);
            }
            if (params.config.learn_obs_variance) og.obs_logvar.data[j] += dlv * inv_n;
        }
        sparse_decode_backward(latent.z, op.loadings, op.decoder, dec_caches[v], drecon,
                               og.decoder, og.decoder_bias, og.loadings.w, dz);
        // Fresh E-step so the penalty gradient is the exact derivative of the
        // penalty value at fixed eta.
        ssl_gamma_update(op.loadings, ssl[v]);
        Matrix pgrad = ssl_penalty_grad(op.loadings, ssl[v]);
        for (std::size_t i = 0; i < pgrad.size(); ++i) og.loadings.w.data[i] += pgrad.data[i];
    }

    // KL and reparameterization backward, in terms of total precision s:
    // kl = 1/(2N) sum (1/s + mu^2 - 1 + ln s), z = mu + eps / sqrt(s).
    Matrix dmean(n, k);
    Matrix dprec(n, k);
    for (std::size_t i = 0; i < dmean.size(); ++i) {
        const double s = poe_cache.total_precision.data[i];
        dmean.data[i] = fused.mean.data[i] * inv_n + dz.data[i];
        dprec.data[i] = 0.5 * (1.0 / s - 1.0 / (s * s)) * inv_n -
                        0.5 * dz.data[i] * latent.noise.data[i] / (s * std::sqrt(s));
    }

    std::vector<Matrix> dmu(v_count), dlv(v_count);
    for (std::size_t v = 0; v < v_count; ++v) {
        dmu[v] = Matrix(n, k);
        dlv[v] = Matrix(n, k);
    }
    Matrix dalpha(n, v_count);
    poe_fuse_backward(posts, alphas, fused, poe_cache, dmean, dprec, dmu, dlv, dalpha);

    Matrix dgate_in = gate_backward(params.gating, gate_cache, dalpha, grads->gating);
    for (std::size_t i = 0; i < n; ++i) {
        const double* gi = dgate_in.row_ptr(i);
        for (std::size_t v = 0; v < v_count; ++v) {
            double* dmu_r = dmu[v].row_ptr(i);
            double* dlv_r = dlv[v].row_ptr(i);
            for (std::size_t j = 0; j < k; ++j) {
                dmu_r[j] += gi[2 * v * k + j];
                dlv_r[j] += gi[(2 * v + 1) * k + j];
            }
        }
    }
    for (std::size_t v = 0; v < v_count; ++v)
        encode_backward(params.omics[v].encoder, enc_caches[v], dmu[v], dlv[v], clamp,
                        grads->omics[v].encoder);
    return lb;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end) {
    Matrix out(end - begin, m.cols);
    for (std::size_t i = begin; i < end; ++i) {
        const double* src = m.row_ptr(order[i]);
        std::copy(src, src + m.cols, out.row_ptr(i - begin));
    }
    return out;
}

} // namespace detail

/// Epoch loop of shuffled mini-batches: AdamW step then an SSL EM update per
/// step; validation (posterior mean, no sampling noise) each epoch; early
/// stop after `patience` epochs without a strictly better validation total.
/// Returns the parameters and SSL state from the best validation epoch.
/// Deterministic given config.seed.
inline TrainResult train(const MultiOmicsDataset& train_set, const MultiOmicsDataset& val_set,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.n_samples() == 0 || val_set.n_samples() == 0)
        throw contract_error("train: empty split");
    const std::size_t v_count = train_set.n_modalities();
    if (v_count == 0 || val_set.n_modalities() != v_count)
        throw contract_error("train: modality mismatch between splits");

    std::vector<std::pair<std::string, std::size_t>> dims;
    for (const auto& om : train_set.omics) dims.push_back({om.name, om.values.cols});

    Rng init_rng(mix_seed(cfg.seed, 0x1017));
    Rng shuffle_rng(mix_seed(cfg.seed, 0x2027));
    Rng noise_rng(mix_seed(cfg.seed, 0x3037));

    TrainResult result;
    result.model = init_model(cfg.model, dims, init_rng);
    for (std::size_t v = 0; v < v_count; ++v) {
        result.ssl.push_back(init_ssl_state(dims[v].second, cfg.model.latent_dim, cfg.ssl_lambda0,
                                            cfg.ssl_lambda1, cfg.ssl_a, cfg.ssl_b));
        ssl_em_converge(result.model.omics[v].loadings, result.ssl[v]);
    }

    ModelParams grads = zeros_like(result.model);
    ParamSet param_set = collect_params(result.model, grads);
    AdamWConfig hp;
    hp.lr = cfg.lr;
    hp.weight_decay = cfg.weight_decay;
    OptState opt = init_opt_state(param_set, hp);

    const std::size_t n_train = train_set.n_samples();
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    std::vector<Matrix> val_x;
    for (const auto& om : val_set.omics) val_x.push_back(om.values);
    Matrix val_noise(val_set.n_samples(), cfg.model.latent_dim);

    ModelParams best_model = result.model;
    std::vector<SSLState> best_ssl = result.ssl;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        LossBreakdown train_lb;
        train_lb.recon.assign(v_count, 0.0);
        train_lb.penalty.assign(v_count, 0.0);
        double seen = 0.0;
        for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, n_train);
            std::vector<Matrix> batch;
            for (const auto& om : train_set.omics)
                batch.push_back(detail::gather_rows(om.values, order, begin, end));
            Matrix noise = random_normal(end - begin, cfg.model.latent_dim, noise_rng);
            zero_grads(param_set);
            LossBreakdown lb = elbo_step(batch, result.model, result.ssl, noise, &grads);
            adamw_step(param_set, opt);
            for (std::size_t v = 0; v < v_count; ++v)
                ssl_em_converge(result.model.omics[v].loadings, result.ssl[v]);

            const auto bs = static_cast<double>(end - begin);
            for (std::size_t v = 0; v < v_count; ++v) {
                train_lb.recon[v] += lb.recon[v] * bs;
                train_lb.penalty[v] += lb.penalty[v] * bs;
            }
            train_lb.kl += lb.kl * bs;
            seen += bs;
        }
        for (std::size_t v = 0; v < v_count; ++v) {
            train_lb.recon[v] /= seen;
            train_lb.penalty[v] /= seen;
        }
        train_lb.kl /= seen;
        train_lb.retotal();

        LossBreakdown val_lb = elbo_step(val_x, result.model, result.ssl, val_noise, nullptr);
        result.history.epochs.push_back({train_lb, val_lb});

        if (val_lb.total < best_val) {
            best_val = val_lb.total;
            result.history.best_epoch = epoch;
            best_model = result.model;
            best_ssl = result.ssl;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) {
                result.history.stop_reason = "no validation improvement for " +
                                             std::to_string(cfg.patience) + " epochs (best " +
                                             std::to_string(result.history.best_epoch + 1) + ")";
                break;
            }
        }
    }
    if (result.history.stop_reason.empty())
        result.history.stop_reason = "reached max epochs (" + std::to_string(cfg.epochs) + ")";
    result.model = std::move(best_model);
    result.ssl = std::move(best_ssl);
    return result;
}

} // namespace poems
