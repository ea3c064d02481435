#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "poems/matrix.hpp"
#include "poems/rng.hpp"
#include "poems/ssl.hpp"

namespace poems {

struct OmicsMatrix {
    std::string name;
    std::vector<std::string> sample_ids;
    std::vector<std::string> feature_names;
    Matrix values; // N x D_v
};

/// V omic blocks over one shared, sorted sample-id order. labels is empty or
/// has one subtype string per sample.
struct MultiOmicsDataset {
    std::vector<OmicsMatrix> omics;
    std::vector<std::string> labels;

    std::size_t n_samples() const { return omics.empty() ? 0 : omics[0].values.rows; }
    std::size_t n_modalities() const { return omics.size(); }
    bool has_labels() const { return !labels.empty(); }
    const std::vector<std::string>& sample_ids() const {
        if (omics.empty()) throw contract_error("dataset has no modalities");
        return omics[0].sample_ids;
    }
};

struct SplitSpec {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
    bool stratified = false;
    std::string warning; // non-empty when stratification was requested but fell back
};

struct SynthOmicSpec {
    std::size_t n_features = 40;
    std::size_t block_size = 5;  // features per factor block
    double active_prob = 0.1;    // fraction of nonzero entries in true W, exact by construction
};

struct SynthSpec {
    std::size_t n_samples = 200;
    std::size_t latent_dim = 8;
    std::size_t n_classes = 4; // mixture components = subtype labels
    std::vector<SynthOmicSpec> omics{{40, 5, 0.1}, {30, 4, 0.1}};
    double noise_scale = 0.1;
    double separation = 5.0; // stddev of mixture-mean coordinates
    std::uint64_t seed = 0;
};

struct SynthData {
    MultiOmicsDataset dataset;
    std::vector<FactorLoadings> true_loadings;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline void split_csv_line(const std::string& line, std::vector<std::string>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline double parse_cell(const std::string& cell, const std::string& path, std::size_t line_no) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw ingest_error(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell +
                           "'");
    if (!std::isfinite(value))
        throw ingest_error(path + ":" + std::to_string(line_no) + ": non-finite value '" + cell +
                           "'");
    return value;
}

} // namespace detail

/// Format: header `sample_id,<feature names...>`, then one row per sample:
/// id followed by decimal numerals. No quoting. Errors carry line numbers.
inline OmicsMatrix load_omics_csv(const std::string& path, const std::string& modality) {
    std::ifstream in(path);
    if (!in) throw ingest_error("cannot open " + path);
    OmicsMatrix m;
    m.name = modality;
    std::string line;
    std::vector<std::string> cells;
    if (!std::getline(in, line)) throw ingest_error(path + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    detail::split_csv_line(line, cells);
    if (cells.empty() || cells[0] != "sample_id")
        throw ingest_error(path + ":1: header must start with 'sample_id'");
    if (cells.size() < 2) throw ingest_error(path + ":1: no feature columns");
    m.feature_names.assign(cells.begin() + 1, cells.end());
    const std::size_t d = m.feature_names.size();

    std::set<std::string> seen;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        detail::split_csv_line(line, cells);
        if (cells.size() != d + 1)
            throw ingest_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(d + 1) + " cells, got " +
                               std::to_string(cells.size()));
        if (!seen.insert(cells[0]).second)
            throw ingest_error(path + ":" + std::to_string(line_no) + ": duplicate sample id '" +
                               cells[0] + "'");
        m.sample_ids.push_back(cells[0]);
        for (std::size_t j = 1; j <= d; ++j)
            values.push_back(detail::parse_cell(cells[j], path, line_no));
    }
    if (m.sample_ids.empty()) throw ingest_error(path + ": no data rows");
    m.values = Matrix(m.sample_ids.size(), d);
    m.values.data = std::move(values);
    return m;
}

/// Two columns `sample_id,subtype`. Duplicate ids rejected.
inline std::map<std::string, std::string> load_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ingest_error("cannot open " + path);
    std::string line;
    std::vector<std::string> cells;
    if (!std::getline(in, line)) throw ingest_error(path + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    detail::split_csv_line(line, cells);
    if (cells.size() != 2 || cells[0] != "sample_id" || cells[1] != "subtype")
        throw ingest_error(path + ":1: header must be 'sample_id,subtype'");
    std::map<std::string, std::string> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        detail::split_csv_line(line, cells);
        if (cells.size() != 2)
            throw ingest_error(path + ":" + std::to_string(line_no) + ": expected 2 cells");
        if (!labels.emplace(cells[0], cells[1]).second)
            throw ingest_error(path + ":" + std::to_string(line_no) + ": duplicate sample id '" +
                               cells[0] + "'");
    }
    if (labels.empty()) throw ingest_error(path + ": no label rows");
    return labels;
}

inline void save_omics_csv(const OmicsMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "sample_id";
    for (const auto& f : m.feature_names) out << ',' << f;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < m.values.rows; ++i) {
        out << m.sample_ids[i];
        for (std::size_t j = 0; j < m.values.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.values(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

inline void save_labels_csv(const std::vector<std::string>& sample_ids,
                            const std::vector<std::string>& labels, const std::string& path) {
    if (sample_ids.size() != labels.size())
        throw contract_error("save_labels_csv: id/label count mismatch");
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "sample_id,subtype\n";
    for (std::size_t i = 0; i < sample_ids.size(); ++i)
        out << sample_ids[i] << ',' << labels[i] << '\n';
    if (!out) throw ingest_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Restricts all modalities (and labels, when given) to the intersection of
/// sample ids, in sorted-id order. Ids dropped from any input are reported.
inline MultiOmicsDataset align(const std::vector<OmicsMatrix>& matrices,
                               const std::map<std::string, std::string>& labels = {},
                               std::vector<std::string>* dropped = nullptr) {
    if (matrices.empty()) throw contract_error("align: no modalities");
    std::set<std::string> keep(matrices[0].sample_ids.begin(), matrices[0].sample_ids.end());
    for (std::size_t v = 1; v < matrices.size(); ++v) {
        std::set<std::string> ids(matrices[v].sample_ids.begin(), matrices[v].sample_ids.end());
        std::set<std::string> inter;
        std::set_intersection(keep.begin(), keep.end(), ids.begin(), ids.end(),
                              std::inserter(inter, inter.begin()));
        keep = std::move(inter);
    }
    if (!labels.empty()) {
        std::set<std::string> inter;
        for (const auto& [id, _] : labels)
            if (keep.count(id)) inter.insert(id);
        keep = std::move(inter);
    }
    if (keep.empty()) throw contract_error("align: empty sample-id intersection");

    if (dropped) {
        std::set<std::string> all;
        for (const auto& m : matrices) all.insert(m.sample_ids.begin(), m.sample_ids.end());
        for (const auto& [id, _] : labels) all.insert(id);
        dropped->clear();
        for (const auto& id : all)
            if (!keep.count(id)) dropped->push_back(id);
    }

    std::vector<std::string> order(keep.begin(), keep.end()); // std::set is sorted
    MultiOmicsDataset ds;
    for (const auto& m : matrices) {
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < m.sample_ids.size(); ++i) pos[m.sample_ids[i]] = i;
        OmicsMatrix om;
        om.name = m.name;
        om.feature_names = m.feature_names;
        om.sample_ids = order;
        om.values = Matrix(order.size(), m.values.cols);
        for (std::size_t i = 0; i < order.size(); ++i) {
            const double* src = m.values.row_ptr(pos.at(order[i]));
            std::copy(src, src + m.values.cols, om.values.row_ptr(i));
        }
        ds.omics.push_back(std::move(om));
    }
    if (!labels.empty()) {
        ds.labels.reserve(order.size());
        for (const auto& id : order) ds.labels.push_back(labels.at(id));
    }
    return ds;
}

/// Row-restriction of a dataset to the given sample indices, keeping order.
inline MultiOmicsDataset subset(const MultiOmicsDataset& ds,
                                const std::vector<std::size_t>& indices) {
    MultiOmicsDataset out;
    for (const auto& om : ds.omics) {
        OmicsMatrix sub;
        sub.name = om.name;
        sub.feature_names = om.feature_names;
        sub.values = Matrix(indices.size(), om.values.cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= om.values.rows) throw contract_error("subset: index out of range");
            sub.sample_ids.push_back(om.sample_ids[indices[i]]);
            const double* src = om.values.row_ptr(indices[i]);
            std::copy(src, src + om.values.cols, sub.values.row_ptr(i));
        }
        out.omics.push_back(std::move(sub));
    }
    if (ds.has_labels())
        for (std::size_t idx : indices) out.labels.push_back(ds.labels[idx]);
    return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace detail {

/// Largest-remainder allocation of `want` picks across groups with exact
/// quotas proportional to group sizes. Ties go to the earlier group.
inline std::vector<std::size_t> allocate_counts(const std::vector<std::size_t>& group_sizes,
                                                std::size_t want, std::size_t total) {
    std::vector<std::size_t> out(group_sizes.size());
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < group_sizes.size(); ++g) {
        const double quota =
            static_cast<double>(want) * static_cast<double>(group_sizes[g]) / total;
        out[g] = static_cast<std::size_t>(quota);
        out[g] = std::min(out[g], group_sizes[g]);
        assigned += out[g];
        rema.push_back({quota - static_cast<double>(out[g]), g});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::size_t left = want > assigned ? want - assigned : 0;
    for (const auto& [frac, g] : rema) {
        if (left == 0) break;
        if (out[g] < group_sizes[g]) {
            ++out[g];
            --left;
        }
    }
    return out;
}

} // namespace detail

/// 80/20 train/test, then 20% of the remaining train as validation, both via
/// round-to-nearest. Stratified by subtype when labels exist and every class
/// has >= 3 samples; otherwise uniform (with a warning if stratification was
/// requested). Deterministic given seed.
inline SplitSpec split(const MultiOmicsDataset& ds, std::uint64_t seed) {
    const std::size_t n = ds.n_samples();
    if (n < 10) throw contract_error("split: need at least 10 samples");
    SplitSpec spec;
    spec.seed = seed;
    const auto n_test = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)));
    const auto n_val =
        static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n - n_test)));

    bool stratify = ds.has_labels();
    if (stratify) {
        std::map<std::string, std::size_t> counts;
        for (const auto& l : ds.labels) ++counts[l];
        for (const auto& [cls, c] : counts) {
            if (c < 3) {
                stratify = false;
                spec.warning = "subtype '" + cls + "' has " + std::to_string(c) +
                               " samples; falling back to uniform split";
                break;
            }
        }
    }
    spec.stratified = stratify;

    Rng rng(mix_seed(seed, 0x5917u));
    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    };

    if (!stratify) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx);
        spec.test.assign(idx.begin(), idx.begin() + n_test);
        spec.val.assign(idx.begin() + n_test, idx.begin() + n_test + n_val);
        spec.train.assign(idx.begin() + n_test + n_val, idx.end());
        return spec;
    }

    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[ds.labels[i]].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [cls, idx] : by_class) {
        shuffle(idx);
        groups.push_back(idx);
    }
    std::vector<std::size_t> sizes;
    for (const auto& g : groups) sizes.push_back(g.size());
    const auto test_alloc = detail::allocate_counts(sizes, n_test, n);
    std::vector<std::size_t> train_pool_sizes;
    for (std::size_t g = 0; g < groups.size(); ++g)
        train_pool_sizes.push_back(sizes[g] - test_alloc[g]);
    const auto val_alloc = detail::allocate_counts(train_pool_sizes, n_val, n - n_test);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& idx = groups[g];
        std::size_t p = 0;
        for (std::size_t c = 0; c < test_alloc[g]; ++c) spec.test.push_back(idx[p++]);
        for (std::size_t c = 0; c < val_alloc[g]; ++c) spec.val.push_back(idx[p++]);
        for (; p < idx.size(); ++p) spec.train.push_back(idx[p]);
    }
    std::sort(spec.test.begin(), spec.test.end());
    std::sort(spec.val.begin(), spec.val.end());
    std::sort(spec.train.begin(), spec.train.end());
    return spec;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct FeatureStats {
    std::string omic;
    Matrix mean; // 1 x D_v, training-split means
    Matrix std;  // 1 x D_v, training-split population stddev; 0 marks degenerate
    std::vector<std::string> zero_variance_features;
};

struct StandardizeStats {
    std::vector<FeatureStats> omics;
};

/// Z-scores every row of every modality with training-split statistics
/// (population variance). Zero-variance features map to all-zero columns.
inline std::pair<MultiOmicsDataset, StandardizeStats> standardize(const MultiOmicsDataset& ds,
                                                                  const SplitSpec& split_spec) {
    if (split_spec.train.empty()) throw contract_error("standardize: empty training split");
    MultiOmicsDataset out = ds;
    StandardizeStats stats;
    const double n_train = static_cast<double>(split_spec.train.size());
    for (auto& om : out.omics) {
        FeatureStats fs;
        fs.omic = om.name;
        fs.mean = Matrix(1, om.values.cols);
        fs.std = Matrix(1, om.values.cols);
        for (std::size_t j = 0; j < om.values.cols; ++j) {
            double s = 0.0;
            for (std::size_t i : split_spec.train) s += om.values(i, j);
            const double mu = s / n_train;
            double sq = 0.0;
            for (std::size_t i : split_spec.train) {
                const double d = om.values(i, j) - mu;
                sq += d * d;
            }
            const double var = sq / n_train;
            fs.mean(0, j) = mu;
            if (var < 1e-12) {
                fs.std(0, j) = 0.0;
                fs.zero_variance_features.push_back(om.feature_names[j]);
                for (std::size_t i = 0; i < om.values.rows; ++i) om.values(i, j) = 0.0;
            } else {
                const double sd = std::sqrt(var);
                fs.std(0, j) = sd;
                for (std::size_t i = 0; i < om.values.rows; ++i)
                    om.values(i, j) = (om.values(i, j) - mu) / sd;
            }
        }
        stats.omics.push_back(std::move(fs));
    }
    return {std::move(out), std::move(stats)};
}

/// Undoes standardize for non-degenerate features; zero-variance columns map
/// back to their training mean (their spread is unrecoverable).
inline MultiOmicsDataset inverse_standardize(const MultiOmicsDataset& ds,
                                             const StandardizeStats& stats) {
    if (ds.omics.size() != stats.omics.size())
        throw contract_error("inverse_standardize: stats/modalities mismatch");
    MultiOmicsDataset out = ds;
    for (std::size_t v = 0; v < out.omics.size(); ++v) {
        auto& om = out.omics[v];
        const FeatureStats& fs = stats.omics[v];
        if (fs.mean.cols != om.values.cols)
            throw shape_error("inverse_standardize: feature count mismatch");
        for (std::size_t i = 0; i < om.values.rows; ++i)
            for (std::size_t j = 0; j < om.values.cols; ++j)
                om.values(i, j) = om.values(i, j) * fs.std(0, j) + fs.mean(0, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data with planted sparse loadings
// ---------------------------------------------------------------------------

/// Latents come from an n_classes-component Gaussian mixture (balanced,
/// component = subtype label). True loadings are block-sparse with an exact
/// nonzero count; the true decoder is linear: x_nj = z_n . (W_v)_j + noise.
inline SynthData synth_generate(const SynthSpec& spec) {
    if (spec.latent_dim == 0) throw contract_error("synth_generate: latent_dim must be > 0");
    if (spec.n_classes == 0) throw contract_error("synth_generate: n_classes must be > 0");
    if (spec.omics.empty()) throw contract_error("synth_generate: need at least one modality");
    const std::size_t n = spec.n_samples;
    const std::size_t k = spec.latent_dim;

    Rng rng(mix_seed(spec.seed, 0x5EED5u));
    Matrix comp_means(spec.n_classes, k);
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        for (std::size_t j = 0; j < k; ++j) comp_means(c, j) = spec.separation * rng.normal();

    SynthData out;
    std::vector<std::string> ids(n);
    out.dataset.labels.resize(n);
    Matrix z(n, k);
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof(buf), "S%06zu", i);
        ids[i] = buf;
        const std::size_t c = i % spec.n_classes;
        out.dataset.labels[i] = "C" + std::to_string(c);
        for (std::size_t j = 0; j < k; ++j) z(i, j) = comp_means(c, j) + rng.normal();
    }

    for (std::size_t v = 0; v < spec.omics.size(); ++v) {
        const SynthOmicSpec& os = spec.omics[v];
        const std::size_t d = os.n_features;
        if (os.block_size == 0 || os.block_size > d)
            throw contract_error("synth_generate: block_size must be in [1, n_features]");
        FactorLoadings w{"omic" + std::to_string(v + 1), Matrix(d, k)};

        // Eligible slots: block-diagonal region first (factor f owns features
        // [f*block, (f+1)*block)), then the rest; exact count from the front
        // of a seeded shuffle of each region.
        std::vector<std::size_t> block_slots, other_slots;
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t f = 0; f < k; ++f) {
                const bool in_block = j / os.block_size == f;
                (in_block ? block_slots : other_slots).push_back(j * k + f);
            }
        }
        auto shuffle = [&rng](std::vector<std::size_t>& s) {
            for (std::size_t i = s.size(); i > 1; --i) std::swap(s[i - 1], s[rng.below(i)]);
        };
        shuffle(block_slots);
        shuffle(other_slots);
        auto active = static_cast<std::size_t>(
            std::llround(os.active_prob * static_cast<double>(d) * static_cast<double>(k)));
        active = std::min(active, d * k);
        for (std::size_t a = 0; a < active; ++a) {
            const std::size_t slot =
                a < block_slots.size() ? block_slots[a] : other_slots[a - block_slots.size()];
            const double mag = rng.uniform(0.8, 1.6);
            w.w.data[slot] = rng.uniform() < 0.5 ? mag : -mag;
        }

        OmicsMatrix om;
        om.name = w.omic;
        om.sample_ids = ids;
        for (std::size_t j = 0; j < d; ++j) om.feature_names.push_back("f" + std::to_string(j));
        om.values = matmul_nt(z, w.w); // x = z W^T
        if (spec.noise_scale != 0.0)
            for (double& x : om.values.data) x += spec.noise_scale * rng.normal();
        out.dataset.omics.push_back(std::move(om));
        out.true_loadings.push_back(std::move(w));
    }
    return out;
}

} // namespace poems
