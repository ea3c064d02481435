#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "poems/data.hpp"
#include "poems/model.hpp"

namespace poems {

/// Integer class assignment per sample; every label lies in [0, n_classes).
struct LabelVector {
    std::vector<std::size_t> labels;
    std::size_t n_classes = 0;
};

inline void validate_labels(const LabelVector& y, const char* who) {
    if (y.n_classes == 0) throw contract_error(std::string(who) + ": zero classes");
    for (std::size_t l : y.labels)
        if (l >= y.n_classes) throw contract_error(std::string(who) + ": label out of range");
}

/// Deterministic string-label encoding: class codes follow the sorted order
/// of the distinct label names.
struct LabelEncoding {
    LabelVector classes;
    std::vector<std::string> names; // index = class code
};

inline LabelEncoding encode_labels(const std::vector<std::string>& labels) {
    if (labels.empty()) throw contract_error("encode_labels: no labels");
    std::map<std::string, std::size_t> index;
    for (const auto& l : labels) index.emplace(l, 0);
    LabelEncoding enc;
    for (auto& [name, code] : index) {
        code = enc.names.size();
        enc.names.push_back(name);
    }
    enc.classes.n_classes = enc.names.size();
    enc.classes.labels.reserve(labels.size());
    for (const auto& l : labels) enc.classes.labels.push_back(index.at(l));
    return enc;
}

// ---------------------------------------------------------------------------
// K-means (k-means++ seeding, Lloyd iterations)
// ---------------------------------------------------------------------------

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t k) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

} // namespace detail

/// Lloyd iterations from explicit starting centroids (one row per cluster).
/// Assignment ties go to the smaller cluster index; a cluster left empty is
/// reseeded with the sample currently farthest from its own centroid (ties to
/// the smaller sample index), provided that distance is positive. Stops when
/// assignments stabilize or after 300 iterations. `wcss_trace`, when given, records the within-cluster sum of
/// squares after every mean update.
inline LabelVector kmeans_lloyd(const Matrix& embeddings, Matrix centroids,
                                std::vector<double>* wcss_trace = nullptr) {
    const std::size_t n = embeddings.rows;
    const std::size_t k = centroids.rows;
    const std::size_t dim = embeddings.cols;
    if (n == 0) throw contract_error("kmeans: empty input");
    if (k == 0 || k > n) throw contract_error("kmeans: need 1 <= k <= N");
    if (centroids.cols != dim) throw shape_error("kmeans: centroid dimension mismatch");
    if (wcss_trace) wcss_trace->clear();

    LabelVector out;
    out.n_classes = k;
    out.labels.assign(n, 0);
    std::vector<std::size_t> prev(n, k); // invalid marker: forces one pass
    constexpr std::size_t kMaxIter = 300;

    for (std::size_t iter = 0; iter < kMaxIter; ++iter) {
        // assignment step
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = detail::sq_dist(embeddings.row_ptr(i), centroids.row_ptr(c), dim);
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            out.labels[i] = arg;
        }

        // empty clusters grab the globally worst-fitted sample
        std::vector<std::size_t> count(k, 0);
        for (std::size_t l : out.labels) ++count[l];
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] != 0) continue;
            double worst = -1.0;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (count[out.labels[i]] <= 1) continue; // don't empty another cluster
                const double d = detail::sq_dist(embeddings.row_ptr(i),
                                                 centroids.row_ptr(out.labels[i]), dim);
                if (d > worst) {
                    worst = d;
                    arg = i;
                }
            }
            // Nothing strictly off-centroid to grab (duplicate points or all
            // singletons): leave the cluster empty rather than churn.
            if (worst <= 0.0) continue;
            --count[out.labels[arg]];
            out.labels[arg] = c;
            ++count[c];
        }

        // update step
        centroids.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double* c = centroids.row_ptr(out.labels[i]);
            const double* x = embeddings.row_ptr(i);
            for (std::size_t j = 0; j < dim; ++j) c[j] += x[j];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] > 0)
                for (std::size_t j = 0; j < dim; ++j)
                    centroids(c, j) /= static_cast<double>(count[c]);

        if (wcss_trace) {
            double wcss = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                wcss += detail::sq_dist(embeddings.row_ptr(i), centroids.row_ptr(out.labels[i]),
                                        dim);
            wcss_trace->push_back(wcss);
        }
        if (out.labels == prev) break;
        prev = out.labels;
    }
    return out;
}

/// k-means++ seeding followed by Lloyd iterations; deterministic given seed.
inline LabelVector kmeans(const Matrix& embeddings, std::size_t k, std::uint64_t seed,
                          std::vector<double>* wcss_trace = nullptr) {
    const std::size_t n = embeddings.rows;
    if (n == 0) throw contract_error("kmeans: empty input");
    if (k == 0 || k > n) throw contract_error("kmeans: need 1 <= k <= N");
    const std::size_t dim = embeddings.cols;

    Rng rng(mix_seed(seed, 0xC1057u));
    Matrix centroids(k, dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = rng.below(n);
    std::copy(embeddings.row_ptr(first), embeddings.row_ptr(first) + dim, centroids.row_ptr(0));
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::sq_dist(embeddings.row_ptr(i),
                                                    centroids.row_ptr(c - 1), dim));
            total += d2[i];
        }
        std::size_t pick;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n); // all remaining mass at chosen centers
        }
        std::copy(embeddings.row_ptr(pick), embeddings.row_ptr(pick) + dim,
                  centroids.row_ptr(c));
    }
    return kmeans_lloyd(embeddings, std::move(centroids), wcss_trace);
}

// ---------------------------------------------------------------------------
// Normalized mutual information
// ---------------------------------------------------------------------------

/// 2 I(y; yhat) / (H(y) + H(yhat)) with natural-log entropies over empirical
/// counts. When both entropies vanish each side is single-class, so the
/// partitions coincide and the 0/0 limit is reported as 1.
inline double nmi(const LabelVector& y, const LabelVector& yhat) {
    validate_labels(y, "nmi");
    validate_labels(yhat, "nmi");
    if (y.labels.size() != yhat.labels.size()) throw contract_error("nmi: length mismatch");
    const std::size_t n = y.labels.size();
    if (n == 0) throw contract_error("nmi: empty labels");

    const std::size_t r = y.n_classes, c = yhat.n_classes;
    std::vector<double> joint(r * c, 0.0), py(r, 0.0), ph(c, 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        joint[y.labels[i] * c + yhat.labels[i]] += inv_n;
        py[y.labels[i]] += inv_n;
        ph[yhat.labels[i]] += inv_n;
    }
    double hy = 0.0, hh = 0.0, mi = 0.0;
    for (double p : py)
        if (p > 0.0) hy -= p * std::log(p);
    for (double p : ph)
        if (p > 0.0) hh -= p * std::log(p);
    for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < c; ++b) {
            const double p = joint[a * c + b];
            if (p > 0.0) mi += p * std::log(p / (py[a] * ph[b]));
        }
    if (hy + hh == 0.0) return 1.0;
    return std::clamp(2.0 * mi / (hy + hh), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Hungarian-matched clustering accuracy
// ---------------------------------------------------------------------------

namespace detail {

/// Minimum-cost perfect matching on a square integer cost matrix (potentials
/// method, O(n^3)). Returns assignment[col] = row.
inline std::vector<std::size_t> hungarian_min_cost(const std::vector<long long>& cost,
                                                   std::size_t m) {
    const long long kInf = std::numeric_limits<long long>::max() / 4;
    std::vector<long long> u(m + 1, 0), v(m + 1, 0), minv(m + 1);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        minv.assign(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            long long delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const long long cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> match(m);
    for (std::size_t j = 1; j <= m; ++j) match[j - 1] = p[j] - 1;
    return match;
}

} // namespace detail

/// Best clustering accuracy over one-to-one relabelings of yhat: confusion
/// matrix padded to square, optimal assignment, matched count / N.
inline double hungarian_acc(const LabelVector& y, const LabelVector& yhat) {
    validate_labels(y, "hungarian_acc");
    validate_labels(yhat, "hungarian_acc");
    if (y.labels.size() != yhat.labels.size())
        throw contract_error("hungarian_acc: length mismatch");
    const std::size_t n = y.labels.size();
    if (n == 0) throw contract_error("hungarian_acc: empty labels");

    const std::size_t m = std::max(y.n_classes, yhat.n_classes);
    std::vector<long long> confusion(m * m, 0);
    long long top = 0;
    for (std::size_t i = 0; i < n; ++i) {
        long long& cell = confusion[y.labels[i] * m + yhat.labels[i]];
        top = std::max(top, ++cell);
    }
    std::vector<long long> cost(m * m);
    for (std::size_t i = 0; i < m * m; ++i) cost[i] = top - confusion[i];
    const std::vector<std::size_t> match = detail::hungarian_min_cost(cost, m);
    long long matched = 0;
    for (std::size_t j = 0; j < m; ++j) matched += confusion[match[j] * m + j];
    return static_cast<double>(matched) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// K-nearest-neighbor classification accuracy
// ---------------------------------------------------------------------------

/// Euclidean KNN majority vote. Neighbor order is (distance, index); class
/// ties break by smaller mean neighbor distance, then smaller class index.
inline double knn_acc(const Matrix& train_emb, const LabelVector& train_labels,
                      const Matrix& test_emb, const LabelVector& test_labels, std::size_t k) {
    validate_labels(train_labels, "knn_acc");
    validate_labels(test_labels, "knn_acc");
    const std::size_t n_train = train_emb.rows;
    const std::size_t n_test = test_emb.rows;
    if (n_train == 0) throw contract_error("knn_acc: empty train set");
    if (n_test == 0) throw contract_error("knn_acc: empty test set");
    if (k == 0 || k > n_train) throw contract_error("knn_acc: need 1 <= k <= train size");
    if (train_labels.labels.size() != n_train || test_labels.labels.size() != n_test)
        throw contract_error("knn_acc: label/embedding count mismatch");
    if (train_emb.cols != test_emb.cols) throw shape_error("knn_acc: dimension mismatch");

    const std::size_t n_cls = std::max(train_labels.n_classes, test_labels.n_classes);
    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> dist(n_train);
    for (std::size_t t = 0; t < n_test; ++t) {
        for (std::size_t i = 0; i < n_train; ++i)
            dist[i] = {detail::sq_dist(test_emb.row_ptr(t), train_emb.row_ptr(i), test_emb.cols),
                       i};
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                          dist.end());
        std::vector<std::size_t> votes(n_cls, 0);
        std::vector<double> mean_d(n_cls, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t cls = train_labels.labels[dist[i].second];
            ++votes[cls];
            mean_d[cls] += std::sqrt(dist[i].first);
        }
        std::size_t best = 0;
        bool have = false;
        for (std::size_t cls = 0; cls < n_cls; ++cls) {
            if (votes[cls] == 0) continue;
            if (!have) {
                best = cls;
                have = true;
                continue;
            }
            const double da = mean_d[cls] / static_cast<double>(votes[cls]);
            const double db = mean_d[best] / static_cast<double>(votes[best]);
            if (votes[cls] > votes[best] || (votes[cls] == votes[best] && da < db))
                best = cls;
        }
        if (best == test_labels.labels[t]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n_test);
}

// ---------------------------------------------------------------------------
// Embeddings and the aggregated evaluation protocol
// ---------------------------------------------------------------------------

/// Fused posterior over a batch: encode every modality, gate, fuse. The
/// evaluation embedding is the fused mean (no sampling).
inline FusedPosterior fused_embedding(const ModelParams& params, const std::vector<Matrix>& x) {
    if (x.size() != params.omics.size())
        throw contract_error("fused_embedding: modality count mismatch");
    std::vector<ModalityPosterior> posts(x.size());
    for (std::size_t v = 0; v < x.size(); ++v)
        posts[v] = encode(x[v], params.omics[v].encoder, params.config.logvar_clamp,
                          params.omics[v].name);
    const GatingWeights alphas = gate(posts, params.gating);
    return poe_fuse(posts, alphas);
}

inline std::vector<Matrix> modality_batches(const MultiOmicsDataset& ds,
                                            const std::vector<std::size_t>& indices) {
    const MultiOmicsDataset sub = subset(ds, indices);
    std::vector<Matrix> out;
    for (const auto& om : sub.omics) out.push_back(om.values);
    return out;
}

struct MetricSummary {
    std::vector<double> per_seed;
    double mean = 0.0;
    double std_dev = 0.0; // population standard deviation over the seed list

    void finalize() {
        if (per_seed.empty()) throw contract_error("MetricSummary: no values");
        mean = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) /
               static_cast<double>(per_seed.size());
        double sq = 0.0;
        for (double v : per_seed) sq += (v - mean) * (v - mean);
        std_dev = std::sqrt(sq / static_cast<double>(per_seed.size()));
    }
};

struct EvalReport {
    std::vector<std::uint64_t> seeds;
    std::size_t n_classes = 0;
    MetricSummary acc_kmeans, nmi_kmeans, acc_knn;
};

inline const std::vector<std::uint64_t>& default_eval_seeds() {
    static const std::vector<std::uint64_t> seeds{0, 12, 21, 42, 1234};
    return seeds;
}

/// Test-split K-means (k = number of subtypes) scored by Hungarian accuracy
/// and NMI, plus KNN accuracy with the classifier fit on train-split
/// embeddings; each repeated per seed and aggregated as mean +/- std.
inline EvalReport evaluate(const ModelParams& params, const MultiOmicsDataset& ds,
                           const SplitSpec& split_spec,
                           const std::vector<std::uint64_t>& seeds = default_eval_seeds(),
                           std::size_t knn_k = 5) {
    if (!ds.has_labels()) throw contract_error("evaluate: dataset has no labels");
    if (seeds.empty()) throw contract_error("evaluate: empty seed list");
    if (split_spec.train.empty() || split_spec.test.empty())
        throw contract_error("evaluate: empty train or test split");

    const LabelEncoding enc = encode_labels(ds.labels);
    auto pick = [&enc](const std::vector<std::size_t>& idx) {
        LabelVector lv;
        lv.n_classes = enc.classes.n_classes;
        for (std::size_t i : idx) lv.labels.push_back(enc.classes.labels[i]);
        return lv;
    };
    const LabelVector train_y = pick(split_spec.train);
    const LabelVector test_y = pick(split_spec.test);

    const Matrix train_emb =
        fused_embedding(params, modality_batches(ds, split_spec.train)).mean;
    const Matrix test_emb = fused_embedding(params, modality_batches(ds, split_spec.test)).mean;

    EvalReport report;
    report.seeds = seeds;
    report.n_classes = enc.classes.n_classes;
    const std::size_t k = std::min<std::size_t>(enc.classes.n_classes, test_emb.rows);
    const double knn = knn_acc(train_emb, train_y, test_emb, test_y,
                               std::min(knn_k, train_emb.rows));
    for (std::uint64_t seed : seeds) {
        const LabelVector clusters = kmeans(test_emb, k, seed);
        report.acc_kmeans.per_seed.push_back(hungarian_acc(test_y, clusters));
        report.nmi_kmeans.per_seed.push_back(nmi(test_y, clusters));
        report.acc_knn.per_seed.push_back(knn);
    }
    report.acc_kmeans.finalize();
    report.nmi_kmeans.finalize();
    report.acc_knn.finalize();
    return report;
}

} // namespace poems
