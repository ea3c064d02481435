#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "poems/eval.hpp"
#include "poems/io.hpp"
#include "poems/model.hpp"
#include "poems/ssl.hpp"

namespace poems {

// ---------------------------------------------------------------------------
// Loading-based rankings
// ---------------------------------------------------------------------------

struct FactorRanking {
    std::size_t factor = 0;
    std::vector<std::pair<std::string, double>> features; // (name, |loading|), descending
};

struct BiomarkerReport {
    std::string omic;
    std::size_t top_k = 0;  // after clamping
    std::string warning;    // non-empty when top_k was clamped to D_v
    std::vector<FactorRanking> factors;
};

namespace detail {

inline void check_names(const FactorLoadings& w, const std::vector<std::string>& names,
                        const char* who) {
    if (names.size() != w.w.rows)
        throw contract_error(std::string(who) + ": need one name per feature row");
}

} // namespace detail

/// Per latent dimension, the top_k features ranked by |loading| descending;
/// ties break by feature-name order.
inline BiomarkerReport top_features_per_factor(const FactorLoadings& w,
                                               const std::vector<std::string>& names,
                                               std::size_t top_k = 10) {
    detail::check_names(w, names, "top_features_per_factor");
    const std::size_t d = w.w.rows, k = w.w.cols;
    BiomarkerReport report;
    report.omic = w.omic;
    report.top_k = top_k;
    if (top_k > d) {
        report.top_k = d;
        report.warning = "top_k " + std::to_string(top_k) + " clamped to " + std::to_string(d) +
                         " features";
    }
    std::vector<std::size_t> order(d);
    for (std::size_t f = 0; f < k; ++f) {
        for (std::size_t j = 0; j < d; ++j) order[j] = j;
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            const double ax = std::abs(w.w(x, f)), ay = std::abs(w.w(y, f));
            if (ax != ay) return ax > ay;
            return names[x] < names[y];
        });
        FactorRanking fr;
        fr.factor = f;
        for (std::size_t r = 0; r < report.top_k; ++r)
            fr.features.push_back({names[order[r]], std::abs(w.w(order[r], f))});
        report.factors.push_back(std::move(fr));
    }
    return report;
}

/// Features ranked by their loading mass summed across latent dimensions.
inline std::vector<std::pair<std::string, double>> aggregated_strength(
    const FactorLoadings& w, const std::vector<std::string>& names, std::size_t top_k = 10) {
    detail::check_names(w, names, "aggregated_strength");
    const std::size_t d = w.w.rows, k = w.w.cols;
    std::vector<std::pair<std::string, double>> agg(d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t f = 0; f < k; ++f) s += std::abs(w.w(j, f));
        agg[j] = {names[j], s};
    }
    std::sort(agg.begin(), agg.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    agg.resize(std::min(top_k, d));
    return agg;
}

/// Per latent dimension, the single strongest feature (max |loading|); exact
/// ties keep the smaller feature index.
inline std::vector<std::pair<std::string, double>> top_feature_per_dimension(
    const FactorLoadings& w, const std::vector<std::string>& names) {
    detail::check_names(w, names, "top_feature_per_dimension");
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t f = 0; f < w.w.cols; ++f) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t j = 0; j < w.w.rows; ++j) {
            const double v = std::abs(w.w(j, f));
            if (v > best) {
                best = v;
                arg = j;
            }
        }
        out.push_back({names[arg], best});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gating weights
// ---------------------------------------------------------------------------

struct GatingReport {
    std::vector<std::string> sample_ids;
    std::vector<std::string> omics;
    Matrix alpha;                   // N x V, rows sum to 1
    std::vector<double> mean_alpha; // per-omic column means
};

/// Per-sample modality weights on the requested rows of the dataset.
inline GatingReport gating_report(const ModelParams& params, const MultiOmicsDataset& ds,
                                  const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw contract_error("gating_report: empty index list");
    const MultiOmicsDataset sub = subset(ds, indices);
    std::vector<ModalityPosterior> posts(sub.omics.size());
    for (std::size_t v = 0; v < sub.omics.size(); ++v)
        posts[v] = encode(sub.omics[v].values, params.omics[v].encoder,
                          params.config.logvar_clamp, params.omics[v].name);
    GatingReport report;
    GatingWeights weights = gate(posts, params.gating);
    report.alpha = std::move(weights.alpha);
    report.sample_ids = sub.sample_ids();
    for (const auto& om : params.omics) report.omics.push_back(om.name);
    report.mean_alpha.assign(report.omics.size(), 0.0);
    for (std::size_t i = 0; i < report.alpha.rows; ++i)
        for (std::size_t v = 0; v < report.alpha.cols; ++v)
            report.mean_alpha[v] += report.alpha(i, v);
    for (double& m : report.mean_alpha) m /= static_cast<double>(report.alpha.rows);
    return report;
}

// ---------------------------------------------------------------------------
// Subtype correlation
// ---------------------------------------------------------------------------

struct CorrelationMatrix {
    std::vector<std::string> subtypes;
    Matrix corr; // S x S, symmetric, unit diagonal
    std::string warning;
};

/// Pearson correlation between per-subtype mean profiles (rows of `values`
/// grouped by label, averaged, then correlated across columns). A profile
/// with no variance across columns leaves its correlations undefined; those
/// entries are reported as 0 with a warning, the diagonal stays 1.
inline CorrelationMatrix subtype_correlation(const Matrix& values,
                                             const std::vector<std::string>& labels) {
    if (labels.size() != values.rows)
        throw contract_error("subtype_correlation: need one label per row");
    if (values.rows == 0) throw contract_error("subtype_correlation: empty input");
    const LabelEncoding enc = encode_labels(labels);
    const std::size_t s_count = enc.classes.n_classes;
    const std::size_t d = values.cols;

    Matrix means(s_count, d);
    std::vector<std::size_t> count(s_count, 0);
    for (std::size_t i = 0; i < values.rows; ++i) {
        const std::size_t s = enc.classes.labels[i];
        ++count[s];
        for (std::size_t j = 0; j < d; ++j) means(s, j) += values(i, j);
    }
    for (std::size_t s = 0; s < s_count; ++s)
        for (std::size_t j = 0; j < d; ++j) means(s, j) /= static_cast<double>(count[s]);

    std::vector<double> center(s_count, 0.0), spread(s_count, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        for (std::size_t j = 0; j < d; ++j) center[s] += means(s, j);
        center[s] /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = means(s, j) - center[s];
            spread[s] += dev * dev;
        }
        spread[s] = std::sqrt(spread[s]);
    }

    CorrelationMatrix out;
    out.subtypes = enc.names;
    out.corr = Matrix(s_count, s_count);
    bool degenerate = false;
    for (std::size_t a = 0; a < s_count; ++a) {
        out.corr(a, a) = 1.0;
        for (std::size_t b = a + 1; b < s_count; ++b) {
            double r = 0.0;
            if (spread[a] > 0.0 && spread[b] > 0.0) {
                double cov = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    cov += (means(a, j) - center[a]) * (means(b, j) - center[b]);
                r = std::clamp(cov / (spread[a] * spread[b]), -1.0, 1.0);
            } else {
                degenerate = true;
            }
            out.corr(a, b) = r;
            out.corr(b, a) = r;
        }
    }
    if (degenerate)
        out.warning = "at least one subtype mean profile has zero variance; "
                      "its correlations are reported as 0";
    return out;
}

// ---------------------------------------------------------------------------
// Latent export
// ---------------------------------------------------------------------------

struct LatentExport {
    std::vector<std::string> sample_ids;
    std::vector<std::size_t> clusters;
    Matrix z; // rows follow sample order: cluster ascending, id ascending
};

/// Fused-mean embeddings of the requested rows, sorted by cluster label
/// (ascending) and stably by sample id within a cluster.
inline LatentExport export_latents(const ModelParams& params, const MultiOmicsDataset& ds,
                                   const std::vector<std::size_t>& indices,
                                   const std::vector<std::size_t>& cluster_labels) {
    if (cluster_labels.size() != indices.size())
        throw contract_error("export_latents: cluster labels and rows must align");
    if (indices.empty()) throw contract_error("export_latents: empty index list");
    const MultiOmicsDataset sub = subset(ds, indices);
    const Matrix emb = fused_embedding(params, modality_batches(ds, indices)).mean;

    std::vector<std::size_t> order(indices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (cluster_labels[x] != cluster_labels[y]) return cluster_labels[x] < cluster_labels[y];
        return sub.sample_ids()[x] < sub.sample_ids()[y];
    });

    LatentExport out;
    out.z = Matrix(order.size(), emb.cols);
    for (std::size_t r = 0; r < order.size(); ++r) {
        out.sample_ids.push_back(sub.sample_ids()[order[r]]);
        out.clusters.push_back(cluster_labels[order[r]]);
        const double* src = emb.row_ptr(order[r]);
        std::copy(src, src + emb.cols, out.z.row_ptr(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV writers (file names fixed by the reporting contract)
// ---------------------------------------------------------------------------

inline void write_biomarkers_csv(const BiomarkerReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "factor,rank,feature,abs_loading\n";
    for (const auto& fr : report.factors)
        for (std::size_t r = 0; r < fr.features.size(); ++r)
            out << fr.factor << ',' << (r + 1) << ',' << fr.features[r].first << ','
                << format_g17(fr.features[r].second) << '\n';
    if (!out) throw ingest_error("write failed for " + path);
}

/// Plain-text companion to the per-factor rankings.
inline std::string biomarker_summary(const BiomarkerReport& report) {
    std::string s = "omic " + report.omic + " (top " + std::to_string(report.top_k) +
                    " features per factor)\n";
    if (!report.warning.empty()) s += "warning: " + report.warning + "\n";
    for (const auto& fr : report.factors) {
        s += "  factor " + std::to_string(fr.factor) + ":";
        for (const auto& [name, v] : fr.features) s += " " + name + "(" + format_g17(v) + ")";
        s += "\n";
    }
    return s;
}

inline void write_gating_csv(const GatingReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "sample_id";
    for (const auto& n : report.omics) out << ",alpha_" << n;
    out << '\n';
    for (std::size_t i = 0; i < report.alpha.rows; ++i) {
        out << report.sample_ids[i];
        for (std::size_t v = 0; v < report.alpha.cols; ++v)
            out << ',' << format_g17(report.alpha(i, v));
        out << '\n';
    }
    out << "mean";
    for (double m : report.mean_alpha) out << ',' << format_g17(m);
    out << '\n';
    if (!out) throw ingest_error("write failed for " + path);
}

inline void write_correlation_csv(const CorrelationMatrix& cm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "subtype";
    for (const auto& s : cm.subtypes) out << ',' << s;
    out << '\n';
    for (std::size_t a = 0; a < cm.corr.rows; ++a) {
        out << cm.subtypes[a];
        for (std::size_t b = 0; b < cm.corr.cols; ++b) out << ',' << format_g17(cm.corr(a, b));
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

inline void write_latents_csv(const LatentExport& latents, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "sample_id,cluster";
    for (std::size_t k = 0; k < latents.z.cols; ++k) out << ",z" << k;
    out << '\n';
    for (std::size_t i = 0; i < latents.z.rows; ++i) {
        out << latents.sample_ids[i] << ',' << latents.clusters[i];
        for (std::size_t k = 0; k < latents.z.cols; ++k)
            out << ',' << format_g17(latents.z(i, k));
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

inline void write_active_map_csv(const FactorLoadings& loadings,
                                 const std::vector<std::string>& names, double threshold,
                                 const std::string& path) {
    detail::check_names(loadings, names, "write_active_map_csv");
    const Matrix map = active_map(loadings, threshold);
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "feature";
    for (std::size_t k = 0; k < map.cols; ++k) out << ",factor" << k;
    out << '\n';
    for (std::size_t j = 0; j < map.rows; ++j) {
        out << names[j];
        for (std::size_t k = 0; k < map.cols; ++k)
            out << ',' << (map(j, k) != 0.0 ? '1' : '0');
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

} // namespace poems
