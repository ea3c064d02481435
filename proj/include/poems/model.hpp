#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "poems/mlp.hpp"
#include "poems/optim.hpp"
#include "poems/ssl.hpp"

namespace poems {

/// Per-omic diagonal Gaussian posterior over the shared latent space.
/// logvar is the clamped log-variance head; var = exp(logvar).
struct ModalityPosterior {
    Matrix mean;   // N x K
    Matrix var;    // N x K, strictly positive
    Matrix logvar; // N x K
};

/// Per-sample modality weights; rows sum to 1.
struct GatingWeights {
    Matrix alpha; // N x V
};

struct FusedPosterior {
    Matrix mean; // N x K
    Matrix var;  // N x K
};

struct LatentSample {
    Matrix z;     // N x K
    Matrix noise; // N x K, the standard-normal draw that produced z
};

struct ModelConfig {
    std::size_t latent_dim = 32;
    std::size_t encoder_hidden = 256;
    std::size_t gating_hidden = 64;
    std::size_t decoder_hidden = 64;
    double logvar_clamp = 10.0;
    bool learn_obs_variance = false;
};

/// Everything owned per omic: encoder (two heads packed as 2K outputs),
/// decoder trunk K -> hidden -> 1, a per-feature output bias, the sparse
/// loadings, and optionally a per-feature observation log-variance.
struct OmicParams {
    std::string name;
    std::size_t n_features = 0;
    MlpParams encoder;
    MlpParams decoder;
    Matrix decoder_bias; // 1 x D_v
    FactorLoadings loadings;
    Matrix obs_logvar; // 1 x D_v, used only when learn_obs_variance
};

struct ModelParams {
    ModelConfig config;
    std::vector<OmicParams> omics;
    MlpParams gating; // 2VK -> hidden -> V

    std::size_t n_modalities() const { return omics.size(); }
};

inline ModelParams init_model(const ModelConfig& config,
                              const std::vector<std::pair<std::string, std::size_t>>& omic_dims,
                              Rng& rng) {
    if (omic_dims.empty()) throw contract_error("init_model: need at least one modality");
    ModelParams m;
    m.config = config;
    const std::size_t k = config.latent_dim;
    for (const auto& [name, d] : omic_dims) {
        OmicParams op;
        op.name = name;
        op.n_features = d;
        op.encoder = init_mlp({d, config.encoder_hidden, 2 * k}, rng);
        op.decoder = init_mlp({k, config.decoder_hidden, 1}, rng);
        op.decoder_bias = Matrix(1, d);
        op.loadings = init_loadings(name, d, k, rng);
        op.obs_logvar = Matrix(1, d);
        m.omics.push_back(std::move(op));
    }
    m.gating = init_mlp({2 * omic_dims.size() * k, config.gating_hidden, omic_dims.size()}, rng);
    return m;
}

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams g;
    g.config = p.config;
    for (const auto& op : p.omics) {
        OmicParams zg;
        zg.name = op.name;
        zg.n_features = op.n_features;
        zg.encoder = zeros_like(op.encoder);
        zg.decoder = zeros_like(op.decoder);
        zg.decoder_bias = Matrix(1, op.n_features);
        zg.loadings = FactorLoadings{op.name, Matrix(op.loadings.w.rows, op.loadings.w.cols)};
        zg.obs_logvar = Matrix(1, op.n_features);
        g.omics.push_back(std::move(zg));
    }
    g.gating = zeros_like(p.gating);
    return g;
}

/// Enumerates every trainable tensor in a fixed order, pairing values with
/// the matching gradient accumulators. The order defines optimizer-state and
/// persistence layout.
inline ParamSet collect_params(ModelParams& params, ModelParams& grads) {
    ParamSet set;
    auto add_mlp = [&set](const std::string& prefix, MlpParams& p, MlpParams& g) {
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            set.push_back({prefix + ".l" + std::to_string(l) + ".W", &p.layers[l].weight,
                           &g.layers[l].weight});
            set.push_back(
                {prefix + ".l" + std::to_string(l) + ".b", &p.layers[l].bias, &g.layers[l].bias});
        }
    };
    for (std::size_t v = 0; v < params.omics.size(); ++v) {
        OmicParams& op = params.omics[v];
        OmicParams& og = grads.omics[v];
        add_mlp("enc." + op.name, op.encoder, og.encoder);
        add_mlp("dec." + op.name, op.decoder, og.decoder);
        set.push_back({"dec." + op.name + ".bias", &op.decoder_bias, &og.decoder_bias});
        set.push_back({"W." + op.name, &op.loadings.w, &og.loadings.w});
        if (params.config.learn_obs_variance)
            set.push_back({"obsvar." + op.name, &op.obs_logvar, &og.obs_logvar});
    }
    add_mlp("gate", params.gating, grads.gating);
    return set;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncodeCache {
    MlpCache mlp;
};

/// Runs one omic's encoder; the 2K outputs split into a mean head and a
/// log-variance head, the latter clamped to +/- logvar_clamp before exp.
inline ModalityPosterior encode(const Matrix& x, const MlpParams& encoder, double logvar_clamp,
                                const std::string& omic, EncodeCache* cache = nullptr) {
    const std::size_t out = encoder.out_dim();
    if (out % 2 != 0) throw contract_error("encode: encoder must emit 2K outputs");
    const std::size_t k = out / 2;
    Matrix heads = mlp_forward(encoder, x, cache ? &cache->mlp : nullptr);
    if (!heads.all_finite()) throw numeric_error("encode: non-finite activations in omic " + omic);
    ModalityPosterior post;
    post.mean = Matrix(x.rows, k);
    post.logvar = Matrix(x.rows, k);
    post.var = Matrix(x.rows, k);
    for (std::size_t n = 0; n < x.rows; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            post.mean(n, j) = heads(n, j);
            double lv = heads(n, k + j);
            lv = std::min(logvar_clamp, std::max(-logvar_clamp, lv));
            post.logvar(n, j) = lv;
            post.var(n, j) = std::exp(lv);
        }
    }
    return post;
}

/// Backward through head split, clamp, and encoder MLP. dmean/dlogvar are
/// gradients w.r.t. the posterior mean and the clamped log-variance.
inline void encode_backward(const MlpParams& encoder, const EncodeCache& cache,
                            const Matrix& dmean, const Matrix& dlogvar, double logvar_clamp,
                            MlpParams& encoder_grads) {
    const Matrix& heads = cache.mlp.act.back();
    const std::size_t k = dmean.cols;
    Matrix dheads(heads.rows, heads.cols);
    for (std::size_t n = 0; n < heads.rows; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            dheads(n, j) = dmean(n, j);
            const double raw = heads(n, k + j);
            dheads(n, k + j) = (raw > -logvar_clamp && raw < logvar_clamp) ? dlogvar(n, j) : 0.0;
        }
    }
    mlp_backward(encoder, cache.mlp, dheads, encoder_grads);
}

// ---------------------------------------------------------------------------
// Gating
// ---------------------------------------------------------------------------

struct GateCache {
    Matrix input; // N x 2VK
    MlpCache mlp;
    Matrix alpha; // N x V
};

/// Gating input: per sample, the concatenation [mean_v, logvar_v] over all
/// modalities. The V logits go through a row-wise softmax.
inline GatingWeights gate(const std::vector<ModalityPosterior>& posteriors,
                          const MlpParams& gating_net, GateCache* cache = nullptr) {
    if (posteriors.empty()) throw contract_error("gate: no modalities");
    const std::size_t n = posteriors[0].mean.rows;
    const std::size_t k = posteriors[0].mean.cols;
    const std::size_t v_count = posteriors.size();
    for (const auto& p : posteriors)
        if (p.mean.rows != n || p.mean.cols != k)
            throw shape_error("gate: posterior shapes disagree");
    Matrix input(n, 2 * v_count * k);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = input.row_ptr(i);
        for (std::size_t v = 0; v < v_count; ++v) {
            const double* mu = posteriors[v].mean.row_ptr(i);
            const double* lv = posteriors[v].logvar.row_ptr(i);
            for (std::size_t j = 0; j < k; ++j) row[2 * v * k + j] = mu[j];
            for (std::size_t j = 0; j < k; ++j) row[(2 * v + 1) * k + j] = lv[j];
        }
    }
    Matrix logits = mlp_forward(gating_net, input, cache ? &cache->mlp : nullptr);
    if (logits.cols != v_count) throw shape_error("gate: gating net must emit V outputs");
    Matrix alpha(n, v_count);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits(i, 0);
        for (std::size_t v = 1; v < v_count; ++v) mx = std::max(mx, logits(i, v));
        double sum = 0.0;
        for (std::size_t v = 0; v < v_count; ++v) {
            alpha(i, v) = std::exp(logits(i, v) - mx);
            sum += alpha(i, v);
        }
        for (std::size_t v = 0; v < v_count; ++v) alpha(i, v) /= sum;
    }
    if (cache) {
        cache->input = std::move(input);
        cache->alpha = alpha;
    }
    return GatingWeights{std::move(alpha)};
}

/// Softmax + MLP backward; returns the gradient w.r.t. the concatenated
/// gating input so the caller can route it back into the posteriors.
inline Matrix gate_backward(const MlpParams& gating_net, const GateCache& cache,
                            const Matrix& dalpha, MlpParams& gating_grads) {
    const Matrix& alpha = cache.alpha;
    Matrix dlogits(alpha.rows, alpha.cols);
    for (std::size_t i = 0; i < alpha.rows; ++i) {
        double dot = 0.0;
        for (std::size_t v = 0; v < alpha.cols; ++v) dot += dalpha(i, v) * alpha(i, v);
        for (std::size_t v = 0; v < alpha.cols; ++v)
            dlogits(i, v) = alpha(i, v) * (dalpha(i, v) - dot);
    }
    return mlp_backward(gating_net, cache.mlp, dlogits, gating_grads);
}

// ---------------------------------------------------------------------------
// Gated Product-of-Experts fusion
// ---------------------------------------------------------------------------

struct PoeCache {
    Matrix total_precision; // N x K, sum_v alpha_v tau_v
};

/// Gated PoE closed form: sigma_s^2 = (sum_v alpha_v tau_v)^-1 and
/// mu_s = sum_v alpha_v tau_v mu_v / sum_v alpha_v tau_v, with tau_v the
/// per-entry precision and alpha_v a per-sample scalar broadcast across K.
inline FusedPosterior poe_fuse(const std::vector<ModalityPosterior>& posteriors,
                               const GatingWeights& alphas, PoeCache* cache = nullptr) {
    if (posteriors.empty()) throw contract_error("poe_fuse: no posteriors");
    const std::size_t n = posteriors[0].mean.rows;
    const std::size_t k = posteriors[0].mean.cols;
    const std::size_t v_count = posteriors.size();
    if (alphas.alpha.rows != n || alphas.alpha.cols != v_count)
        throw shape_error("poe_fuse: alpha is " + shape_str(alphas.alpha) + ", want " +
                          std::to_string(n) + "x" + std::to_string(v_count));
    Matrix prec(n, k);
    Matrix num(n, k);
    for (std::size_t v = 0; v < v_count; ++v) {
        const ModalityPosterior& p = posteriors[v];
        if (p.mean.rows != n || p.mean.cols != k)
            throw shape_error("poe_fuse: posterior shapes disagree");
        for (std::size_t i = 0; i < n; ++i) {
            const double a = alphas.alpha(i, v);
            const double* mu = p.mean.row_ptr(i);
            const double* var = p.var.row_ptr(i);
            double* pr = prec.row_ptr(i);
            double* nr = num.row_ptr(i);
            for (std::size_t j = 0; j < k; ++j) {
                const double at = a / var[j];
                pr[j] += at;
                nr[j] += at * mu[j];
            }
        }
    }
    FusedPosterior fused;
    fused.mean = Matrix(n, k);
    fused.var = Matrix(n, k);
    for (std::size_t i = 0; i < n * k; ++i) {
        const double s = prec.data[i];
        if (!(s > 0.0)) throw numeric_error("poe_fuse: total precision not positive");
        fused.var.data[i] = 1.0 / s;
        fused.mean.data[i] = num.data[i] / s;
    }
    if (cache) cache->total_precision = std::move(prec);
    return fused;
}

/// Backward of the fusion given gradients w.r.t. the fused mean and the
/// total precision s. Accumulates into per-modality mean/logvar grads and
/// the gating-weight grad.
inline void poe_fuse_backward(const std::vector<ModalityPosterior>& posteriors,
                              const GatingWeights& alphas, const FusedPosterior& fused,
                              const PoeCache& cache, const Matrix& dmean, const Matrix& dprec,
                              std::vector<Matrix>& dmu, std::vector<Matrix>& dlogvar,
                              Matrix& dalpha) {
    const std::size_t n = fused.mean.rows;
    const std::size_t k = fused.mean.cols;
    const std::size_t v_count = posteriors.size();
    // mean = num / s:  dnum = dmean / s,  ds = dprec - dmean * mean / s
    Matrix dnum(n, k);
    Matrix ds(n, k);
    for (std::size_t i = 0; i < n * k; ++i) {
        const double s = cache.total_precision.data[i];
        dnum.data[i] = dmean.data[i] / s;
        ds.data[i] = dprec.data[i] - dmean.data[i] * fused.mean.data[i] / s;
    }
    for (std::size_t v = 0; v < v_count; ++v) {
        const ModalityPosterior& p = posteriors[v];
        for (std::size_t i = 0; i < n; ++i) {
            const double a = alphas.alpha(i, v);
            const double* mu = p.mean.row_ptr(i);
            const double* var = p.var.row_ptr(i);
            double* dmu_r = dmu[v].row_ptr(i);
            double* dlv_r = dlogvar[v].row_ptr(i);
            double da = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double tau = 1.0 / var[j];
                const double g = ds.row_ptr(i)[j] + dnum.row_ptr(i)[j] * mu[j];
                da += g * tau;
                // tau = exp(-logvar): dlogvar = -tau * dtau
                dlv_r[j] += -a * tau * g;
                dmu_r[j] += dnum.row_ptr(i)[j] * a * tau;
            }
            dalpha(i, v) += da;
        }
    }
}

// ---------------------------------------------------------------------------
// Reparameterization
// ---------------------------------------------------------------------------

inline LatentSample reparameterize(const FusedPosterior& fused, const Matrix& noise) {
    if (!noise.same_shape(fused.mean)) throw shape_error("reparameterize: noise shape mismatch");
    LatentSample s;
    s.noise = noise;
    s.z = Matrix(fused.mean.rows, fused.mean.cols);
    for (std::size_t i = 0; i < s.z.size(); ++i)
        s.z.data[i] = fused.mean.data[i] + std::sqrt(fused.var.data[i]) * noise.data[i];
    return s;
}

inline LatentSample reparameterize(const FusedPosterior& fused, Rng& rng) {
    return reparameterize(fused, random_normal(fused.mean.rows, fused.mean.cols, rng));
}

// ---------------------------------------------------------------------------
// Sparse decoding
// ---------------------------------------------------------------------------

struct DecodeCache {
    MlpCache mlp; // act[0] is the (N*D) x K masked-latent stack
};

/// Vectorized sparse decoder; entry (n,j) = trunk(z_n (.) W_j) + bias_j.
/// With a cache (training) it materializes all N*D masked latents as one
/// stack so the backward pass can reuse them. The cache-free path
/// (validation, evaluation, benchmarking) instead fuses the masking into
/// per-feature products that stay in cache and skips every inactive factor
/// of a feature row, which is where the sparsity of W pays off.
inline Matrix sparse_decode(const Matrix& z, const FactorLoadings& loadings,
                            const MlpParams& decoder, const Matrix& bias,
                            DecodeCache* cache = nullptr) {
    const std::size_t n = z.rows;
    const std::size_t k = z.cols;
    const std::size_t d = loadings.w.rows;
    if (loadings.w.cols != k) throw shape_error("sparse_decode: W is " + shape_str(loadings.w) +
                                                ", latent dim " + std::to_string(k));
    if (decoder.in_dim() != k || decoder.out_dim() != 1)
        throw shape_error("sparse_decode: trunk must map K -> 1");
    if (bias.rows != 1 || bias.cols != d) throw shape_error("sparse_decode: bias must be 1 x D");

    if (cache) {
        Matrix masked(n * d, k);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zr = z.row_ptr(i);
            double* out = masked.row_ptr(i * d);
            for (std::size_t j = 0; j < d; ++j) {
                const double* wr = loadings.w.row_ptr(j);
                for (std::size_t c = 0; c < k; ++c) out[j * k + c] = zr[c] * wr[c];
            }
        }
        Matrix flat = mlp_forward(decoder, masked, &cache->mlp);
        Matrix recon(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            double* rr = recon.row_ptr(i);
            const double* fr = flat.data.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) rr[j] = fr[j] + bias.data[j];
        }
        return recon;
    }

    Matrix recon(n, d);
    const DenseLayer& first = decoder.layers.front();
    const std::size_t h1 = first.weight.cols;

    // Buffers sized once and reused for every feature; shrinking resizes
    // below never reallocate.
    Matrix gathered(n, k);  // scaled active columns of z, n x nnz in use
    Matrix gathered_w(k, h1); // matching active rows of the first layer
    std::vector<Matrix> acts;
    acts.emplace_back(n, h1);
    for (std::size_t l = 1; l < decoder.layers.size(); ++l)
        acts.emplace_back(n, decoder.layers[l].weight.cols);
    std::vector<std::size_t> active;
    active.reserve(k);

    for (std::size_t j = 0; j < d; ++j) {
        const double* wr = loadings.w.row_ptr(j);
        active.clear();
        for (std::size_t c = 0; c < k; ++c)
            if (wr[c] != 0.0) active.push_back(c);
        const std::size_t nnz = active.size();

        Matrix& head = acts[0];
        if (nnz == 0) {
            for (std::size_t i = 0; i < n; ++i)
                std::copy(first.bias.data.begin(), first.bias.data.end(), head.row_ptr(i));
        } else {
            gathered.rows = n;
            gathered.cols = nnz;
            gathered.data.resize(n * nnz);
            for (std::size_t i = 0; i < n; ++i) {
                const double* zr = z.row_ptr(i);
                double* g = gathered.row_ptr(i);
                for (std::size_t t = 0; t < nnz; ++t) g[t] = zr[active[t]] * wr[active[t]];
            }
            gathered_w.rows = nnz;
            gathered_w.cols = h1;
            gathered_w.data.resize(nnz * h1);
            for (std::size_t t = 0; t < nnz; ++t)
                std::copy(first.weight.row_ptr(active[t]),
                          first.weight.row_ptr(active[t]) + h1, gathered_w.row_ptr(t));
            matmul(gathered, gathered_w, head);
            add_rowvec_inplace(head, first.bias);
        }
        apply_activation(head, first.act);
        for (std::size_t l = 1; l < decoder.layers.size(); ++l) {
            matmul(acts[l - 1], decoder.layers[l].weight, acts[l]);
            add_rowvec_inplace(acts[l], decoder.layers[l].bias);
            apply_activation(acts[l], decoder.layers[l].act);
        }
        const Matrix& out = acts.back();
        const double bj = bias.data[j];
        for (std::size_t i = 0; i < n; ++i) recon(i, j) = out.data[i] + bj;
    }
    return recon;
}

/// Reference decoder: an explicit loop over features with a separate masked
/// latent vector per feature, evaluated with straight-line scalar code. Kept
/// as an independent route for equivalence checks and as the timing baseline.
inline Matrix sparse_decode_reference(const Matrix& z, const FactorLoadings& loadings,
                                      const MlpParams& decoder, const Matrix& bias) {
    const std::size_t n = z.rows;
    const std::size_t k = z.cols;
    const std::size_t d = loadings.w.rows;
    if (loadings.w.cols != k) throw shape_error("sparse_decode_reference: W shape mismatch");
    if (decoder.in_dim() != k || decoder.out_dim() != 1)
        throw shape_error("sparse_decode_reference: trunk must map K -> 1");
    if (bias.rows != 1 || bias.cols != d) throw shape_error("sparse_decode_reference: bad bias");

    Matrix recon(n, d);
    std::vector<double> masked(k);
    std::vector<double> cur, next;
    for (std::size_t j = 0; j < d; ++j) {
        const double* wr = loadings.w.row_ptr(j);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zr = z.row_ptr(i);
            for (std::size_t c = 0; c < k; ++c) masked[c] = zr[c] * wr[c];
            cur.assign(masked.begin(), masked.end());
            for (const auto& layer : decoder.layers) {
                const std::size_t in_dim = layer.weight.rows;
                const std::size_t out_dim = layer.weight.cols;
                next.assign(layer.bias.data.begin(), layer.bias.data.end());
                for (std::size_t a = 0; a < in_dim; ++a) {
                    const double xa = cur[a];
                    const double* wrow = layer.weight.row_ptr(a);
                    for (std::size_t b = 0; b < out_dim; ++b) next[b] += xa * wrow[b];
                }
                if (layer.act == Activation::relu) {
                    for (double& vv : next) vv = vv > 0.0 ? vv : 0.0;
                } else if (layer.act == Activation::tanh) {
                    for (double& vv : next) vv = std::tanh(vv);
                }
                cur.swap(next);
            }
            recon(i, j) = cur[0] + bias.data[j];
        }
    }
    return recon;
}

/// Backward of the vectorized decoder. Accumulates trunk/bias/W grads and
/// adds the latent gradient into dz.
inline void sparse_decode_backward(const Matrix& z, const FactorLoadings& loadings,
                                   const MlpParams& decoder, const DecodeCache& cache,
                                   const Matrix& drecon, MlpParams& decoder_grads, Matrix& dbias,
                                   Matrix& dloadings, Matrix& dz) {
    const std::size_t n = z.rows;
    const std::size_t k = z.cols;
    const std::size_t d = loadings.w.rows;
    Matrix dflat(n * d, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* dr = drecon.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            dflat.data[i * d + j] = dr[j];
            dbias.data[j] += dr[j];
        }
    }
    Matrix dmasked = mlp_backward(decoder, cache.mlp, dflat, decoder_grads);
    for (std::size_t i = 0; i < n; ++i) {
        const double* zr = z.row_ptr(i);
        double* dzr = dz.row_ptr(i);
        const double* dm = dmasked.row_ptr(i * d);
        for (std::size_t j = 0; j < d; ++j) {
            const double* wr = loadings.w.row_ptr(j);
            double* dwr = dloadings.row_ptr(j);
            for (std::size_t c = 0; c < k; ++c) {
                dzr[c] += dm[j * k + c] * wr[c];
                dwr[c] += dm[j * k + c] * zr[c];
            }
        }
    }
}

} // namespace poems
