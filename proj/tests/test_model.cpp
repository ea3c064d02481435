#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "poems/gradcheck.hpp"
#include "poems/model.hpp"

using namespace poems;

namespace {

struct Expert {
    double mean, var, alpha;
};

// Tempered-product oracle: normalize prod_v N(z; mu_v, var_v)^{alpha_v} on a
// fine grid and fit mean/variance numerically.
std::pair<double, double> grid_fuse(const std::vector<Expert>& experts) {
    double lo = experts[0].mean, hi = experts[0].mean;
    for (const auto& e : experts) {
        lo = std::min(lo, e.mean - 12.0 * std::sqrt(e.var));
        hi = std::max(hi, e.mean + 12.0 * std::sqrt(e.var));
    }
    const double step = 1e-3;
    const auto n = static_cast<std::size_t>((hi - lo) / step) + 1;
    std::vector<double> logq(n);
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = lo + step * static_cast<double>(i);
        double acc = 0.0;
        for (const auto& e : experts) {
            const double r = z - e.mean;
            acc += e.alpha * (-0.5 * std::log(2.0 * M_PI * e.var) - r * r / (2.0 * e.var));
        }
        logq[i] = acc;
        mx = std::max(mx, acc);
    }
    double wsum = 0.0, zsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(logq[i] - mx);
        wsum += w;
        zsum += w * (lo + step * static_cast<double>(i));
    }
    const double mean = zsum / wsum;
    double vsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = lo + step * static_cast<double>(i);
        vsum += std::exp(logq[i] - mx) * (z - mean) * (z - mean);
    }
    return {mean, vsum / wsum};
}

ModalityPosterior make_posterior(const Matrix& mean, const Matrix& var) {
    ModalityPosterior p;
    p.mean = mean;
    p.var = var;
    p.logvar = var;
    for (double& v : p.logvar.data) v = std::log(v);
    return p;
}

MlpParams constant_encoder(std::size_t d, std::size_t k, const std::vector<double>& head_bias) {
    MlpParams enc;
    enc.layers.push_back({Matrix(d, 2 * k), Matrix(1, 2 * k), Activation::identity});
    for (std::size_t j = 0; j < 2 * k; ++j) enc.layers[0].bias(0, j) = head_bias[j];
    return enc;
}

} // namespace

TEST_CASE("encode with a constant net replicates the biases") {
    const MlpParams enc = constant_encoder(3, 2, {1.5, -0.5, 0.2, -1.0});
    Matrix x(4, 3);
    x(2, 1) = 9.0;
    const ModalityPosterior p = encode(x, enc, 10.0, "omic1");
    for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(p.mean(i, 0) == 1.5);
        REQUIRE(p.mean(i, 1) == -0.5);
        REQUIRE(p.var(i, 0) == Catch::Approx(std::exp(0.2)).epsilon(1e-15));
        REQUIRE(p.var(i, 1) == Catch::Approx(std::exp(-1.0)).epsilon(1e-15));
    }
}

TEST_CASE("encode clamps the log-variance head") {
    const MlpParams enc = constant_encoder(2, 1, {0.0, 50.0});
    const ModalityPosterior p = encode(Matrix(1, 2), enc, 10.0, "omic1");
    REQUIRE(p.logvar(0, 0) == 10.0);
    REQUIRE(p.var(0, 0) == Catch::Approx(std::exp(10.0)).epsilon(1e-15));

    const MlpParams enc2 = constant_encoder(2, 1, {0.0, -50.0});
    const ModalityPosterior p2 = encode(Matrix(1, 2), enc2, 10.0, "omic1");
    REQUIRE(p2.var(0, 0) == Catch::Approx(std::exp(-10.0)).epsilon(1e-15));
}

TEST_CASE("encode gradients pass finite differences") {
    Rng rng(31);
    MlpParams enc = init_mlp({4, 6, 2 * 3}, rng);
    MlpParams grads = zeros_like(enc);
    ParamSet set;
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        set.push_back({"W" + std::to_string(l), &enc.layers[l].weight, &grads.layers[l].weight});
        set.push_back({"b" + std::to_string(l), &enc.layers[l].bias, &grads.layers[l].bias});
    }
    const Matrix x = random_normal(5, 4, rng);
    const Matrix cm = random_normal(5, 3, rng); // cotangent on mu
    const Matrix cv = random_normal(5, 3, rng); // cotangent on sigma^2
    auto loss = [&]() {
        const ModalityPosterior p = encode(x, enc, 10.0, "o");
        double acc = 0.0;
        for (std::size_t i = 0; i < p.mean.size(); ++i)
            acc += cm.data[i] * p.mean.data[i] + cv.data[i] * p.var.data[i];
        return acc;
    };
    EncodeCache cache;
    const ModalityPosterior p = encode(x, enc, 10.0, "o", &cache);
    Matrix dlogvar(5, 3);
    for (std::size_t i = 0; i < dlogvar.size(); ++i)
        dlogvar.data[i] = cv.data[i] * p.var.data[i]; // d sigma^2 / d logvar = sigma^2
    zero_grads(set);
    encode_backward(enc, cache, cm, dlogvar, 10.0, grads);
    REQUIRE(finite_diff_check(loss, set) < 1e-5);
}

TEST_CASE("gate with a zero net is uniform") {
    Rng rng(33);
    std::vector<ModalityPosterior> posts;
    for (int v = 0; v < 3; ++v)
        posts.push_back(make_posterior(random_normal(4, 2, rng),
                                       random_uniform(4, 2, 0.5, 2.0, rng)));
    MlpParams net;
    net.layers.push_back({Matrix(2 * 3 * 2, 3), Matrix(1, 3), Activation::identity});
    const GatingWeights gw = gate(posts, net);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t v = 0; v < 3; ++v)
            REQUIRE(gw.alpha(i, v) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("gate softmax arithmetic") {
    Rng rng(34);
    std::vector<ModalityPosterior> posts;
    for (int v = 0; v < 2; ++v)
        posts.push_back(make_posterior(random_normal(3, 2, rng),
                                       random_uniform(3, 2, 0.5, 2.0, rng)));
    MlpParams net;
    net.layers.push_back({Matrix(8, 2), Matrix(1, 2), Activation::identity});
    net.layers[0].bias(0, 0) = std::log(3.0);
    const GatingWeights gw = gate(posts, net);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(gw.alpha(i, 0) == Catch::Approx(0.75).epsilon(1e-12));
        REQUIRE(gw.alpha(i, 1) == Catch::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("gate rows normalize for random nets") {
    Rng rng(35);
    std::vector<ModalityPosterior> posts;
    for (int v = 0; v < 3; ++v)
        posts.push_back(make_posterior(random_normal(6, 4, rng),
                                       random_uniform(6, 4, 0.25, 4.0, rng)));
    MlpParams net = init_mlp({2 * 3 * 4, 5, 3}, rng);
    const GatingWeights gw = gate(posts, net);
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t v = 0; v < 3; ++v) {
            REQUIRE(gw.alpha(i, v) > 0.0);
            REQUIRE(gw.alpha(i, v) < 1.0);
            sum += gw.alpha(i, v);
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-9);
    }
    REQUIRE_THROWS_AS(gate({}, net), contract_error);
}

TEST_CASE("poe_fuse with a single unit-weight expert is the identity") {
    const Matrix mean{{0.3, -1.25}};
    const Matrix var{{0.7, 2.0}};
    std::vector<ModalityPosterior> posts{make_posterior(mean, var)};
    GatingWeights alpha{Matrix(1, 1, 1.0)};
    const FusedPosterior f = poe_fuse(posts, alpha);
    REQUIRE(f.mean(0, 0) == 0.3);
    REQUIRE(f.mean(0, 1) == -1.25);
    REQUIRE(f.var(0, 0) == 0.7);
    REQUIRE(f.var(0, 1) == 2.0);
}

TEST_CASE("poe_fuse closed-form worked example") {
    std::vector<ModalityPosterior> posts{
        make_posterior(Matrix{{0.0}}, Matrix{{1.0}}),
        make_posterior(Matrix{{2.0}}, Matrix{{1.0}}),
    };
    const FusedPosterior f = poe_fuse(posts, GatingWeights{Matrix{{0.5, 0.5}}});
    REQUIRE(f.mean(0, 0) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(f.var(0, 0) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("poe_fuse matches the tempered-product grid oracle") {
    {
        std::vector<ModalityPosterior> posts{
            make_posterior(Matrix{{0.0}}, Matrix{{1.0}}),
            make_posterior(Matrix{{2.0}}, Matrix{{1.0}}),
        };
        const FusedPosterior f = poe_fuse(posts, GatingWeights{Matrix{{0.25, 0.75}}});
        REQUIRE(f.mean(0, 0) == Catch::Approx(1.5).margin(1e-12));
        REQUIRE(f.var(0, 0) == Catch::Approx(1.0).margin(1e-12));
        const auto [gm, gv] = grid_fuse({{0.0, 1.0, 0.25}, {2.0, 1.0, 0.75}});
        REQUIRE(f.mean(0, 0) == Catch::Approx(gm).margin(1e-6));
        REQUIRE(f.var(0, 0) == Catch::Approx(gv).margin(1e-6));
    }
    Rng rng(37);
    for (int rep = 0; rep < 3; ++rep) {
        std::vector<Expert> experts;
        std::vector<ModalityPosterior> posts;
        Matrix alpha(1, 3);
        double asum = 0.0;
        for (int v = 0; v < 3; ++v) {
            alpha(0, v) = rng.uniform(0.1, 1.0);
            asum += alpha(0, v);
        }
        for (int v = 0; v < 3; ++v) {
            alpha(0, v) /= asum;
            const double mu = rng.uniform(-2.0, 2.0);
            const double var = rng.uniform(0.3, 3.0);
            experts.push_back({mu, var, alpha(0, v)});
            posts.push_back(make_posterior(Matrix{{mu}}, Matrix{{var}}));
        }
        const FusedPosterior f = poe_fuse(posts, GatingWeights{alpha});
        const auto [gm, gv] = grid_fuse(experts);
        REQUIRE(f.mean(0, 0) == Catch::Approx(gm).margin(1e-6));
        REQUIRE(f.var(0, 0) == Catch::Approx(gv).margin(1e-6));
    }
}

TEST_CASE("fused variance never exceeds any single gated expert's") {
    Rng rng(39);
    std::vector<ModalityPosterior> posts;
    for (int v = 0; v < 3; ++v)
        posts.push_back(make_posterior(random_normal(5, 4, rng),
                                       random_uniform(5, 4, 0.2, 5.0, rng)));
    Matrix alpha(5, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t v = 0; v < 3; ++v) {
            alpha(i, v) = rng.uniform(0.05, 1.0);
            sum += alpha(i, v);
        }
        for (std::size_t v = 0; v < 3; ++v) alpha(i, v) /= sum;
    }
    const FusedPosterior f = poe_fuse(posts, GatingWeights{alpha});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t v = 0; v < 3; ++v)
                REQUIRE(f.var(i, k) <= posts[v].var(i, k) / alpha(i, v) + 1e-12);
}

TEST_CASE("rescaling an alpha row and renormalizing leaves the fused mean") {
    Rng rng(41);
    std::vector<ModalityPosterior> posts;
    for (int v = 0; v < 2; ++v)
        posts.push_back(make_posterior(random_normal(3, 2, rng),
                                       random_uniform(3, 2, 0.5, 2.0, rng)));
    Matrix alpha(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        alpha(i, 0) = rng.uniform(0.2, 0.8);
        alpha(i, 1) = 1.0 - alpha(i, 0);
    }
    const FusedPosterior base = poe_fuse(posts, GatingWeights{alpha});
    Matrix scaled = alpha;
    for (std::size_t i = 0; i < 3; ++i) {
        const double c = 0.37;
        double sum = 0.0;
        for (std::size_t v = 0; v < 2; ++v) {
            scaled(i, v) *= c;
            sum += scaled(i, v);
        }
        for (std::size_t v = 0; v < 2; ++v) scaled(i, v) /= sum;
    }
    const FusedPosterior f = poe_fuse(posts, GatingWeights{scaled});
    REQUIRE(max_abs_diff(f.mean, base.mean) < 1e-12);
}

TEST_CASE("reparameterize is exact in its closed form") {
    FusedPosterior f;
    f.mean = Matrix{{0.0, 2.0}};
    f.var = Matrix{{1.0, 4.0}};
    const LatentSample zero = reparameterize(f, Matrix(1, 2));
    REQUIRE(zero.z(0, 0) == 0.0);
    REQUIRE(zero.z(0, 1) == 2.0);
    const LatentSample one = reparameterize(f, Matrix(1, 2, 1.0));
    REQUIRE(one.z(0, 0) == 1.0);
    REQUIRE(one.z(0, 1) == 4.0);
}

TEST_CASE("reparameterize sample mean concentrates on the posterior mean") {
    FusedPosterior f;
    f.mean = Matrix{{0.7, -1.2}};
    f.var = Matrix{{0.5, 2.0}};
    Rng rng(43);
    const std::size_t n = 100000;
    double sum0 = 0.0, sum1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const LatentSample s = reparameterize(f, random_normal(1, 2, rng));
        sum0 += s.z(0, 0);
        sum1 += s.z(0, 1);
    }
    const double tol0 = 3.0 * std::sqrt(0.5) / std::sqrt(static_cast<double>(n));
    const double tol1 = 3.0 * std::sqrt(2.0) / std::sqrt(static_cast<double>(n));
    REQUIRE(std::abs(sum0 / n - 0.7) < tol0);
    REQUIRE(std::abs(sum1 / n + 1.2) < tol1);
}

TEST_CASE("sparse_decode identity and zero masks") {
    Rng rng(45);
    const std::size_t n = 4, k = 3, d = 5;
    MlpParams trunk = init_mlp({k, 6, 1}, rng);
    Matrix bias = random_normal(1, d, rng);
    const Matrix z = random_normal(n, k, rng);

    FactorLoadings ones{"o", Matrix(d, k, 1.0)};
    const Matrix recon = sparse_decode(z, ones, trunk, bias);
    const Matrix trunk_z = mlp_forward(trunk, z);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE(recon(i, j) == Catch::Approx(trunk_z(i, 0) + bias(0, j)).margin(1e-12));

    FactorLoadings mixed{"o", Matrix(d, k, 1.0)};
    for (std::size_t c = 0; c < k; ++c) mixed.w(2, c) = 0.0; // feature 2 masked out
    const Matrix recon2 = sparse_decode(z, mixed, trunk, bias);
    const Matrix trunk_zero = mlp_forward(trunk, Matrix(1, k));
    for (std::size_t i = 0; i < n; ++i)
        REQUIRE(recon2(i, 2) == Catch::Approx(trunk_zero(0, 0) + bias(0, 2)).margin(1e-12));
}

TEST_CASE("sparse_decode equals the reference loop") {
    Rng rng(47);
    for (auto [n, d, k] : {std::array<std::size_t, 3>{6, 9, 4},
                           std::array<std::size_t, 3>{1, 1, 1},
                           std::array<std::size_t, 3>{3, 17, 2}}) {
        MlpParams trunk = init_mlp({k, 5, 1}, rng);
        const Matrix bias = random_normal(1, d, rng);
        const Matrix z = random_normal(n, k, rng);
        const FactorLoadings w{"o", random_uniform(d, k, -1.0, 1.0, rng)};
        const Matrix a = sparse_decode(z, w, trunk, bias);
        const Matrix b = sparse_decode_reference(z, w, trunk, bias);
        REQUIRE(a.rows == n);
        REQUIRE(a.cols == d);
        REQUIRE(max_abs_diff(a, b) < 1e-10);
    }
    MlpParams trunk = init_mlp({3, 5, 1}, rng);
    const FactorLoadings w{"o", Matrix(4, 3)};
    REQUIRE_THROWS_AS(sparse_decode(Matrix(2, 2), w, trunk, Matrix(1, 4)), shape_error);
    REQUIRE_THROWS_AS(sparse_decode(Matrix(2, 3), w, trunk, Matrix(1, 5)), shape_error);
}

TEST_CASE("sparse_decode agrees across sparse masks and cache modes") {
    Rng rng(48);
    const std::size_t n = 7, d = 12, k = 5;
    MlpParams trunk = init_mlp({k, 6, 1}, rng);
    const Matrix bias = random_normal(1, d, rng);
    const Matrix z = random_normal(n, k, rng);

    // Mostly-zero loadings with an all-zero row and an all-zero factor column.
    FactorLoadings w{"o", Matrix(d, k)};
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < k; ++c)
            if (rng.uniform() < 0.3) w.w(j, c) = rng.uniform(-1.5, 1.5);
    for (std::size_t c = 0; c < k; ++c) w.w(4, c) = 0.0;
    for (std::size_t j = 0; j < d; ++j) w.w(j, 2) = 0.0;

    const Matrix fast = sparse_decode(z, w, trunk, bias);
    const Matrix ref = sparse_decode_reference(z, w, trunk, bias);
    REQUIRE(max_abs_diff(fast, ref) < 1e-10);

    DecodeCache cache;
    const Matrix stacked = sparse_decode(z, w, trunk, bias, &cache);
    REQUIRE(max_abs_diff(fast, stacked) < 1e-10);
    REQUIRE(cache.mlp.act.front().rows == n * d);
}

TEST_CASE("composite encoder-to-decoder gradients pass finite differences") {
    Rng rng(49);
    const std::size_t n = 4, k = 3;
    const std::vector<std::pair<std::string, std::size_t>> dims{{"omic1", 5}, {"omic2", 4}};
    ModelConfig cfg;
    cfg.latent_dim = k;
    cfg.encoder_hidden = 6;
    cfg.gating_hidden = 5;
    cfg.decoder_hidden = 4;
    ModelParams params = init_model(cfg, dims, rng);
    ModelParams grads = zeros_like(params);
    ParamSet set = collect_params(params, grads);

    std::vector<Matrix> x{random_normal(n, 5, rng), random_normal(n, 4, rng)};
    const Matrix noise = random_normal(n, k, rng);
    std::vector<Matrix> cot{random_normal(n, 5, rng), random_normal(n, 4, rng)};

    auto forward = [&](std::vector<EncodeCache>* ec, GateCache* gc, PoeCache* pc,
                       std::vector<DecodeCache>* dc, std::vector<ModalityPosterior>* posts_out,
                       GatingWeights* alpha_out, FusedPosterior* fused_out,
                       LatentSample* latent_out) {
        std::vector<ModalityPosterior> posts(2);
        for (std::size_t v = 0; v < 2; ++v)
            posts[v] = encode(x[v], params.omics[v].encoder, cfg.logvar_clamp,
                              params.omics[v].name, ec ? &(*ec)[v] : nullptr);
        GatingWeights alpha = gate(posts, params.gating, gc);
        FusedPosterior fused = poe_fuse(posts, alpha, pc);
        LatentSample latent = reparameterize(fused, noise);
        double acc = 0.0;
        for (std::size_t v = 0; v < 2; ++v) {
            const Matrix recon =
                sparse_decode(latent.z, params.omics[v].loadings, params.omics[v].decoder,
                              params.omics[v].decoder_bias, dc ? &(*dc)[v] : nullptr);
            for (std::size_t i = 0; i < recon.size(); ++i)
                acc += cot[v].data[i] * recon.data[i];
        }
        if (posts_out) *posts_out = posts;
        if (alpha_out) *alpha_out = alpha;
        if (fused_out) *fused_out = fused;
        if (latent_out) *latent_out = latent;
        return acc;
    };

    std::vector<EncodeCache> ec(2);
    GateCache gc;
    PoeCache pc;
    std::vector<DecodeCache> dc(2);
    std::vector<ModalityPosterior> posts;
    GatingWeights alpha;
    FusedPosterior fused;
    LatentSample latent;
    forward(&ec, &gc, &pc, &dc, &posts, &alpha, &fused, &latent);

    zero_grads(set);
    Matrix dz(n, k);
    for (std::size_t v = 0; v < 2; ++v)
        sparse_decode_backward(latent.z, params.omics[v].loadings, params.omics[v].decoder,
                               dc[v], cot[v], grads.omics[v].decoder,
                               grads.omics[v].decoder_bias, grads.omics[v].loadings.w, dz);
    Matrix dmean = dz;
    Matrix dprec(n, k);
    for (std::size_t i = 0; i < dprec.size(); ++i) {
        const double s = pc.total_precision.data[i];
        dprec.data[i] = -0.5 * dz.data[i] * noise.data[i] / (s * std::sqrt(s));
    }
    std::vector<Matrix> dmu(2, Matrix(n, k)), dlv(2, Matrix(n, k));
    Matrix dalpha(n, 2);
    poe_fuse_backward(posts, alpha, fused, pc, dmean, dprec, dmu, dlv, dalpha);
    const Matrix dgate_in = gate_backward(params.gating, gc, dalpha, grads.gating);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t v = 0; v < 2; ++v)
            for (std::size_t j = 0; j < k; ++j) {
                dmu[v](i, j) += dgate_in(i, 2 * v * k + j);
                dlv[v](i, j) += dgate_in(i, (2 * v + 1) * k + j);
            }
    for (std::size_t v = 0; v < 2; ++v)
        encode_backward(params.omics[v].encoder, ec[v], dmu[v], dlv[v], cfg.logvar_clamp,
                        grads.omics[v].encoder);

    auto loss = [&]() {
        return forward(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr);
    };
    REQUIRE(finite_diff_check(loss, set) < 1e-4);
}

TEST_CASE("init_model wires shapes and the parameter set") {
    Rng rng(51);
    ModelConfig cfg;
    cfg.latent_dim = 4;
    ModelParams m = init_model(cfg, {{"mRNA", 10}, {"miRNA", 7}}, rng);
    REQUIRE(m.n_modalities() == 2);
    REQUIRE(m.omics[0].encoder.in_dim() == 10);
    REQUIRE(m.omics[0].encoder.out_dim() == 8);
    REQUIRE(m.gating.in_dim() == 2 * 2 * 4);
    REQUIRE(m.gating.out_dim() == 2);
    REQUIRE(m.omics[1].decoder.in_dim() == 4);
    REQUIRE(m.omics[1].decoder.out_dim() == 1);
    REQUIRE(m.omics[1].loadings.w.rows == 7);
    REQUIRE(m.omics[1].loadings.w.cols == 4);

    ModelParams g = zeros_like(m);
    ParamSet set = collect_params(m, g);
    // per omic: 2 encoder layers * 2 + 2 decoder layers * 2 + bias + loadings
    REQUIRE(set.size() == 2 * (4 + 4 + 2) + 4);
    cfg.learn_obs_variance = true;
    ModelParams m2 = init_model(cfg, {{"a", 5}}, rng);
    ModelParams g2 = zeros_like(m2);
    REQUIRE(collect_params(m2, g2).size() == 4 + 4 + 2 + 1 + 4);
}
