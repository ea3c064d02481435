#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poems/data.hpp"
#include "poems/eval.hpp"
#include "poems/model.hpp"
#include "poems/objective.hpp"

namespace poems {

/// 17 significant digits: every double round-trips bit-exactly through this.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Raw numeric matrix CSV (no header row)
// ---------------------------------------------------------------------------

inline void write_matrix_csv(const Matrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out << ',';
            out << format_g17(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ingest_error("cannot open " + path);
    std::vector<double> values;
    std::size_t cols = 0, rows = 0, line_no = 0;
    std::string line;
    std::vector<std::string> cells;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        detail::split_csv_line(line, cells);
        if (cols == 0)
            cols = cells.size();
        else if (cells.size() != cols)
            throw ingest_error(path + ":" + std::to_string(line_no) + ": ragged row");
        for (const auto& c : cells) values.push_back(detail::parse_cell(c, path, line_no));
        ++rows;
    }
    if (rows == 0) throw ingest_error(path + ": empty matrix");
    Matrix m(rows, cols);
    m.data = std::move(values);
    return m;
}

// ---------------------------------------------------------------------------
// Flat key=value text files ('#' starts a comment line)
// ---------------------------------------------------------------------------

inline void write_key_values(const std::vector<std::pair<std::string, std::string>>& kv,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
    if (!out) throw ingest_error("write failed for " + path);
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ingest_error("cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ingest_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value, got '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

namespace detail {

inline double kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& where) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ingest_error(where + ": missing key '" + key + "'");
    return parse_cell(it->second, where, 0);
}

inline std::size_t kv_size(const std::map<std::string, std::string>& kv, const std::string& key,
                           const std::string& where) {
    const double v = kv_double(kv, key, where);
    if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw ingest_error(where + ": key '" + key + "' is not a nonnegative integer");
    return static_cast<std::size_t>(v);
}

inline const std::string& kv_string(const std::map<std::string, std::string>& kv,
                                    const std::string& key, const std::string& where) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ingest_error(where + ": missing key '" + key + "'");
    return it->second;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Model persistence: a directory of raw CSV matrices plus manifest.txt
// describing architecture, prior state, and the name->file mapping.
// Round trips are bit-exact.
// ---------------------------------------------------------------------------

inline void save_model(const ModelParams& params, const std::vector<SSLState>& ssl,
                       const std::string& dir) {
    if (ssl.size() != params.omics.size())
        throw contract_error("save_model: ssl state count mismatch");
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    // collect_params needs mutable handles; a scratch copy keeps this const
    ModelParams scratch = params;
    ModelParams grads = zeros_like(scratch);
    const ParamSet set = collect_params(scratch, grads);

    std::vector<std::pair<std::string, std::string>> kv;
    kv.push_back({"format", "poems-model-v1"});
    kv.push_back({"latent_dim", std::to_string(params.config.latent_dim)});
    kv.push_back({"encoder_hidden", std::to_string(params.config.encoder_hidden)});
    kv.push_back({"gating_hidden", std::to_string(params.config.gating_hidden)});
    kv.push_back({"decoder_hidden", std::to_string(params.config.decoder_hidden)});
    kv.push_back({"logvar_clamp", format_g17(params.config.logvar_clamp)});
    kv.push_back({"learn_obs_variance", params.config.learn_obs_variance ? "1" : "0"});
    kv.push_back({"n_omics", std::to_string(params.omics.size())});
    for (std::size_t v = 0; v < params.omics.size(); ++v) {
        const std::string p = "omic." + std::to_string(v) + ".";
        kv.push_back({p + "name", params.omics[v].name});
        kv.push_back({p + "features", std::to_string(params.omics[v].n_features)});
        kv.push_back({p + "lambda0", format_g17(ssl[v].lambda0)});
        kv.push_back({p + "lambda1", format_g17(ssl[v].lambda1)});
        kv.push_back({p + "a", format_g17(ssl[v].a)});
        kv.push_back({p + "b", format_g17(ssl[v].b)});
        std::string eta;
        for (std::size_t k = 0; k < ssl[v].eta.size(); ++k) {
            if (k) eta += ',';
            eta += format_g17(ssl[v].eta[k]);
        }
        kv.push_back({p + "eta", eta});
        const std::string gfile = "gamma_" + std::to_string(v) + ".csv";
        kv.push_back({p + "gamma_file", gfile});
        write_matrix_csv(ssl[v].gamma, (fs::path(dir) / gfile).string());
    }
    kv.push_back({"n_params", std::to_string(set.size())});
    for (std::size_t i = 0; i < set.size(); ++i) {
        char fname[32];
        std::snprintf(fname, sizeof(fname), "param_%03zu.csv", i);
        const std::string p = "param." + std::to_string(i) + ".";
        kv.push_back({p + "name", set[i].name});
        kv.push_back({p + "file", fname});
        kv.push_back({p + "rows", std::to_string(set[i].value->rows)});
        kv.push_back({p + "cols", std::to_string(set[i].value->cols)});
        write_matrix_csv(*set[i].value, (fs::path(dir) / fname).string());
    }
    write_key_values(kv, (fs::path(dir) / "manifest.txt").string());
}

inline std::pair<ModelParams, std::vector<SSLState>> load_model(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest = (fs::path(dir) / "manifest.txt").string();
    const auto kv = read_key_values(manifest);
    if (detail::kv_string(kv, "format", manifest) != "poems-model-v1")
        throw ingest_error(manifest + ": unknown model format");

    ModelConfig cfg;
    cfg.latent_dim = detail::kv_size(kv, "latent_dim", manifest);
    cfg.encoder_hidden = detail::kv_size(kv, "encoder_hidden", manifest);
    cfg.gating_hidden = detail::kv_size(kv, "gating_hidden", manifest);
    cfg.decoder_hidden = detail::kv_size(kv, "decoder_hidden", manifest);
    cfg.logvar_clamp = detail::kv_double(kv, "logvar_clamp", manifest);
    cfg.learn_obs_variance = detail::kv_string(kv, "learn_obs_variance", manifest) == "1";

    const std::size_t n_omics = detail::kv_size(kv, "n_omics", manifest);
    std::vector<std::pair<std::string, std::size_t>> dims;
    for (std::size_t v = 0; v < n_omics; ++v) {
        const std::string p = "omic." + std::to_string(v) + ".";
        dims.push_back({detail::kv_string(kv, p + "name", manifest),
                        detail::kv_size(kv, p + "features", manifest)});
    }
    Rng rng(0); // every value is overwritten below
    ModelParams params = init_model(cfg, dims, rng);
    ModelParams grads = zeros_like(params);
    const ParamSet set = collect_params(params, grads);

    const std::size_t n_params = detail::kv_size(kv, "n_params", manifest);
    if (n_params != set.size())
        throw ingest_error(manifest + ": parameter count mismatch (" + std::to_string(n_params) +
                           " stored, " + std::to_string(set.size()) + " expected)");
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::string p = "param." + std::to_string(i) + ".";
        if (detail::kv_string(kv, p + "name", manifest) != set[i].name)
            throw ingest_error(manifest + ": parameter name mismatch at index " +
                               std::to_string(i));
        const std::string file = detail::kv_string(kv, p + "file", manifest);
        Matrix m = read_matrix_csv((fs::path(dir) / file).string());
        if (m.rows != detail::kv_size(kv, p + "rows", manifest) ||
            m.cols != detail::kv_size(kv, p + "cols", manifest) || !m.same_shape(*set[i].value))
            throw ingest_error(manifest + ": shape mismatch for parameter " + set[i].name);
        *set[i].value = std::move(m);
    }

    std::vector<SSLState> ssl;
    for (std::size_t v = 0; v < n_omics; ++v) {
        const std::string p = "omic." + std::to_string(v) + ".";
        SSLState s = init_ssl_state(dims[v].second, cfg.latent_dim,
                                    detail::kv_double(kv, p + "lambda0", manifest),
                                    detail::kv_double(kv, p + "lambda1", manifest),
                                    detail::kv_double(kv, p + "a", manifest),
                                    detail::kv_double(kv, p + "b", manifest));
        std::vector<std::string> cells;
        detail::split_csv_line(detail::kv_string(kv, p + "eta", manifest), cells);
        if (cells.size() != cfg.latent_dim)
            throw ingest_error(manifest + ": eta length mismatch for omic " + dims[v].first);
        for (std::size_t k = 0; k < cells.size(); ++k)
            s.eta[k] = detail::parse_cell(cells[k], manifest, 0);
        Matrix g = read_matrix_csv(
            (fs::path(dir) / detail::kv_string(kv, p + "gamma_file", manifest)).string());
        if (!g.same_shape(s.gamma))
            throw ingest_error(manifest + ": gamma shape mismatch for omic " + dims[v].first);
        s.gamma = std::move(g);
        ssl.push_back(std::move(s));
    }
    return {std::move(params), std::move(ssl)};
}

// ---------------------------------------------------------------------------
// Training history and evaluation reports
// ---------------------------------------------------------------------------

inline void write_history_csv(const TrainHistory& history,
                              const std::vector<std::string>& omic_names,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "epoch";
    for (const char* side : {"train", "val"}) {
        for (const auto& n : omic_names) out << ',' << side << "_recon_" << n;
        out << ',' << side << "_kl";
        for (const auto& n : omic_names) out << ',' << side << "_penalty_" << n;
        out << ',' << side << "_total";
    }
    out << '\n';
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        out << (e + 1);
        for (const LossBreakdown* lb : {&history.epochs[e].train, &history.epochs[e].val}) {
            if (lb->recon.size() != omic_names.size())
                throw contract_error("write_history_csv: omic name count mismatch");
            for (double r : lb->recon) out << ',' << format_g17(r);
            out << ',' << format_g17(lb->kl);
            for (double p : lb->penalty) out << ',' << format_g17(p);
            out << ',' << format_g17(lb->total);
        }
        out << '\n';
    }
    if (!out) throw ingest_error("write failed for " + path);
}

inline void write_train_summary(const TrainHistory& history, const std::string& path) {
    write_key_values({{"epochs_run", std::to_string(history.epochs.size())},
                      {"best_epoch", std::to_string(history.best_epoch + 1)},
                      {"stop_reason", history.stop_reason}},
                     path);
}

inline void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot open " + path + " for writing");
    out << "seed,acc_kmeans,nmi_kmeans,acc_knn\n";
    for (std::size_t i = 0; i < report.seeds.size(); ++i)
        out << report.seeds[i] << ',' << format_g17(report.acc_kmeans.per_seed[i]) << ','
            << format_g17(report.nmi_kmeans.per_seed[i]) << ','
            << format_g17(report.acc_knn.per_seed[i]) << '\n';
    if (!out) throw ingest_error("write failed for " + path);
}

inline void write_eval_summary(const EvalReport& report, const std::string& path) {
    std::string seeds;
    for (std::size_t i = 0; i < report.seeds.size(); ++i) {
        if (i) seeds += ',';
        seeds += std::to_string(report.seeds[i]);
    }
    write_key_values({{"seeds", seeds},
                      {"n_classes", std::to_string(report.n_classes)},
                      {"acc_kmeans.mean", format_g17(report.acc_kmeans.mean)},
                      {"acc_kmeans.std", format_g17(report.acc_kmeans.std_dev)},
                      {"nmi_kmeans.mean", format_g17(report.nmi_kmeans.mean)},
                      {"nmi_kmeans.std", format_g17(report.nmi_kmeans.std_dev)},
                      {"acc_knn.mean", format_g17(report.acc_knn.mean)},
                      {"acc_knn.std", format_g17(report.acc_knn.std_dev)}},
                     path);
}

} // namespace poems
