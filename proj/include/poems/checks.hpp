#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "poems/eval.hpp"
#include "poems/gradcheck.hpp"
#include "poems/model.hpp"
#include "poems/objective.hpp"
#include "poems/ssl.hpp"

namespace poems {

/// One verification check: an independently computed oracle against the
/// production code path, with the worst observed error and its gate.
struct CheckResult {
    std::string name;
    bool passed = false;
    double max_err = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

// ---------------------------------------------------------------------------
// Gradient integrity
// ---------------------------------------------------------------------------

/// Central finite differences over every trainable tensor of a 4-sample,
/// 2-omic (D=6,4, K=3) toy, in both observation-variance modes.
inline CheckResult check_gradients() {
    CheckResult r{"gradient_fd", false, 0.0, 1e-4,
                  "4-sample 2-omic toy (D=6,4, K=3), fixed and learned noise"};
    for (const bool learn_obs : {false, true}) {
        ModelConfig cfg;
        cfg.latent_dim = 3;
        cfg.encoder_hidden = 5;
        cfg.gating_hidden = 4;
        cfg.decoder_hidden = 4;
        cfg.learn_obs_variance = learn_obs;
        Rng rng(learn_obs ? 18 : 17);
        ModelParams params = init_model(cfg, {{"mRNA", 6}, {"methyl", 4}}, rng);
        std::vector<SSLState> ssl;
        ssl.push_back(init_ssl_state(6, 3, 7.0, 0.9, 2.0, 2.0));
        ssl.push_back(init_ssl_state(4, 3, 5.0, 0.8, 1.5, 3.0));
        ssl[0].eta = {0.3, 0.6, 0.9};
        ssl[1].eta = {0.8, 0.2, 0.5};
        const std::vector<Matrix> x = {random_normal(4, 6, rng), random_normal(4, 4, rng)};
        const Matrix noise = random_normal(4, 3, rng);

        ModelParams grads = zeros_like(params);
        ParamSet set = collect_params(params, grads);
        zero_grads(set);
        elbo_step(x, params, ssl, noise, &grads);
        const double err = finite_diff_check(
            [&] { return elbo_step(x, params, ssl, noise, nullptr).total; }, set);
        r.max_err = std::max(r.max_err, err);
    }
    r.passed = r.max_err <= r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Gated-fusion oracle
// ---------------------------------------------------------------------------

namespace detail {

/// Numerically normalizes prod_v N(z; mu_v, var_v)^{alpha_v} on a fine grid
/// and fits mean/variance, independent of the closed form under test.
inline std::pair<double, double> grid_fuse_1d(const std::vector<double>& means,
                                              const std::vector<double>& vars,
                                              const std::vector<double>& alphas) {
    double lo = means[0], hi = means[0];
    for (double m : means) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    lo -= 25.0;
    hi += 25.0;
    const double step = 1e-3;
    const auto n = static_cast<std::size_t>((hi - lo) / step) + 1;
    std::vector<double> logq(n);
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = lo + step * static_cast<double>(i);
        double acc = 0.0;
        for (std::size_t v = 0; v < means.size(); ++v) {
            const double rres = z - means[v];
            acc += alphas[v] *
                   (-0.5 * std::log(2.0 * M_PI * vars[v]) - rres * rres / (2.0 * vars[v]));
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

} // namespace detail

/// Randomized fusion cases (V<=4, K<=5) against the tempered-product grid
/// oracle.
inline CheckResult check_poe(std::size_t cases = 100, std::uint64_t seed = 2) {
    CheckResult r{"poe_grid_oracle", false, 0.0, 1e-6,
                  std::to_string(cases) + " randomized cases, V<=4, K<=5"};
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t v_count = 1 + rng.below(4);
        const std::size_t k = 1 + rng.below(5);

        std::vector<ModalityPosterior> posts(v_count);
        Matrix alpha(1, v_count);
        double asum = 0.0;
        for (std::size_t v = 0; v < v_count; ++v) {
            posts[v].mean = random_uniform(1, k, -3.0, 3.0, rng);
            posts[v].var = random_uniform(1, k, 0.3, 2.5, rng);
            posts[v].logvar = posts[v].var;
            for (double& lv : posts[v].logvar.data) lv = std::log(lv);
            alpha(0, v) = rng.uniform(0.2, 1.0);
            asum += alpha(0, v);
        }
        for (double& a : alpha.data) a /= asum;

        const FusedPosterior fused = poe_fuse(posts, GatingWeights{alpha});
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> means(v_count), vars(v_count), alphas(v_count);
            for (std::size_t v = 0; v < v_count; ++v) {
                means[v] = posts[v].mean(0, j);
                vars[v] = posts[v].var(0, j);
                alphas[v] = alpha(0, v);
            }
            const auto [gm, gv] = detail::grid_fuse_1d(means, vars, alphas);
            r.max_err = std::max(r.max_err, std::abs(fused.mean(0, j) - gm));
            r.max_err = std::max(r.max_err, std::abs(fused.var(0, j) - gv));
        }
    }
    r.passed = r.max_err <= r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Clustering-metric oracles
// ---------------------------------------------------------------------------

/// Exhaustive comparison of hungarian_acc and nmi against permutation and
/// contingency-table oracles over every ordered pair of label vectors up to
/// max_len positions and 3 classes.
inline CheckResult check_metrics(std::size_t max_len = 8) {
    CheckResult r{"metric_enumeration", false, 0.0, 1e-12, ""};
    static constexpr std::array<std::array<int, 3>, 6> kPerms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    // Natural logs of the small integers every count is drawn from.
    std::array<double, 9> log_tab{};
    for (std::size_t i = 1; i < log_tab.size(); ++i)
        log_tab[i] = std::log(static_cast<double>(i));

    std::size_t pair_count = 0;
    for (std::size_t n = 1; n <= max_len; ++n) {
        std::size_t total = 1;
        for (std::size_t i = 0; i < n; ++i) total *= 3;
        std::vector<std::array<std::uint8_t, 8>> seq(total);
        std::vector<std::uint8_t> ncls(total);
        for (std::size_t code = 0; code < total; ++code) {
            std::size_t c = code;
            std::uint8_t mx = 0;
            for (std::size_t i = 0; i < n; ++i) {
                seq[code][i] = static_cast<std::uint8_t>(c % 3);
                mx = std::max(mx, seq[code][i]);
                c /= 3;
            }
            ncls[code] = static_cast<std::uint8_t>(mx + 1);
        }

        LabelVector y, yh;
        y.labels.resize(n);
        yh.labels.resize(n);
        for (std::size_t a = 0; a < total; ++a) {
            for (std::size_t i = 0; i < n; ++i) y.labels[i] = seq[a][i];
            y.n_classes = ncls[a];
            for (std::size_t b = 0; b < total; ++b) {
                for (std::size_t i = 0; i < n; ++i) yh.labels[i] = seq[b][i];
                yh.n_classes = ncls[b];
                ++pair_count;

                int c3[3][3] = {};
                int row[3] = {}, col[3] = {};
                for (std::size_t i = 0; i < n; ++i) {
                    ++c3[seq[a][i]][seq[b][i]];
                    ++row[seq[a][i]];
                    ++col[seq[b][i]];
                }

                // Accuracy oracle: best class bijection by brute force.
                int best = 0;
                for (const auto& p : kPerms) {
                    const int agree = c3[0][p[0]] + c3[1][p[1]] + c3[2][p[2]];
                    best = std::max(best, agree);
                }
                const double acc_oracle =
                    static_cast<double>(best) / static_cast<double>(n);

                // NMI oracle straight from the contingency counts.
                const double dn = static_cast<double>(n);
                const double log_n = log_tab[n];
                double hy = 0.0, hyh = 0.0, mi = 0.0;
                for (int i = 0; i < 3; ++i) {
                    if (row[i] > 0) hy -= row[i] / dn * (log_tab[row[i]] - log_n);
                    if (col[i] > 0) hyh -= col[i] / dn * (log_tab[col[i]] - log_n);
                }
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        if (c3[i][j] > 0)
                            mi += c3[i][j] / dn *
                                  (log_tab[c3[i][j]] + log_n - log_tab[row[i]] - log_tab[col[j]]);
                const double nmi_oracle =
                    hy + hyh == 0.0 ? 1.0
                                    : std::clamp(2.0 * mi / (hy + hyh), 0.0, 1.0);

                const double acc_err = std::abs(hungarian_acc(y, yh) - acc_oracle);
                const double nmi_err = std::abs(nmi(y, yh) - nmi_oracle);
                r.max_err = std::max({r.max_err, acc_err, nmi_err});
            }
        }
    }
    r.detail = std::to_string(pair_count) + " ordered label pairs, length <= " +
               std::to_string(max_len) + ", <= 3 classes";
    r.passed = r.max_err <= r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Prior-formula spot checks
// ---------------------------------------------------------------------------

/// Worked inclusion/rate values: gamma(0) with lambda0=10, lambda1=1,
/// eta=0.5 equals 1/11; the rate update for D=4, gamma=(1,1,0,0), a=b=1
/// equals 1/2.
inline CheckResult check_ssl() {
    CheckResult r{"ssl_worked_examples", false, 0.0, 1e-12,
                  "inclusion at w=0 and Beta-Bernoulli rate update"};
    FactorLoadings w{"check", Matrix(1, 1)};
    SSLState s = init_ssl_state(1, 1, 10.0, 1.0, 1.0, 1.0);
    ssl_gamma_update(w, s);
    r.max_err = std::abs(s.gamma(0, 0) - 1.0 / 11.0);

    SSLState s2 = init_ssl_state(4, 1, 10.0, 1.0, 1.0, 1.0);
    s2.gamma(0, 0) = 1.0;
    s2.gamma(1, 0) = 1.0;
    s2.gamma(2, 0) = 0.0;
    s2.gamma(3, 0) = 0.0;
    ssl_eta_update(s2, 4);
    r.max_err = std::max(r.max_err, std::abs(s2.eta[0] - 0.5));
    r.passed = r.max_err <= r.tolerance;
    return r;
}

inline std::vector<CheckResult> run_all_checks(std::size_t metrics_max_len = 8,
                                               std::size_t poe_cases = 100) {
    return {check_gradients(), check_poe(poe_cases), check_metrics(metrics_max_len), check_ssl()};
}

// ---------------------------------------------------------------------------
// Decoder benchmark
// ---------------------------------------------------------------------------

struct BenchReport {
    std::size_t n = 0, d = 0, k = 0, reps = 0;
    double median_vectorized = 0.0; // seconds
    double median_reference = 0.0;  // seconds
    double speedup = 0.0;           // reference / vectorized
    double max_deviation = 0.0;     // element-wise, deterministic
};

/// Times sparse_decode against sparse_decode_reference on identical inputs
/// and verifies element-wise agreement.
inline BenchReport run_decode_bench(std::size_t n, std::size_t d, std::size_t k,
                                    std::size_t reps, std::uint64_t seed = 7) {
    if (n == 0 || d == 0 || k == 0) throw contract_error("run_decode_bench: sizes must be > 0");
    if (reps < 5) throw contract_error("run_decode_bench: need at least 5 repetitions");
    Rng rng(seed);
    const Matrix z = random_normal(n, k, rng);
    FactorLoadings w{"bench", Matrix(d, k)};
    for (double& x : w.w.data)
        if (rng.uniform() < 0.1) x = rng.uniform(-1.5, 1.5);
    const MlpParams trunk = init_mlp({k, 64, 1}, rng);
    const Matrix bias = random_uniform(1, d, -0.5, 0.5, rng);

    auto median = [](std::vector<double> t) {
        std::sort(t.begin(), t.end());
        const std::size_t m = t.size() / 2;
        return t.size() % 2 == 1 ? t[m] : 0.5 * (t[m - 1] + t[m]);
    };
    using clock = std::chrono::steady_clock;
    std::vector<double> t_fast, t_ref;
    Matrix out_fast, out_ref;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        const auto t0 = clock::now();
        out_fast = sparse_decode(z, w, trunk, bias);
        const auto t1 = clock::now();
        out_ref = sparse_decode_reference(z, w, trunk, bias);
        const auto t2 = clock::now();
        t_fast.push_back(std::chrono::duration<double>(t1 - t0).count());
        t_ref.push_back(std::chrono::duration<double>(t2 - t1).count());
    }

    BenchReport report;
    report.n = n;
    report.d = d;
    report.k = k;
    report.reps = reps;
    report.median_vectorized = median(t_fast);
    report.median_reference = median(t_ref);
    report.speedup = report.median_reference / report.median_vectorized;
    for (std::size_t i = 0; i < out_fast.size(); ++i)
        report.max_deviation =
            std::max(report.max_deviation, std::abs(out_fast.data[i] - out_ref.data[i]));
    return report;
}

} // namespace poems
