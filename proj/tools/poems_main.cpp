// poems: command-line surface for the gated product-of-experts multi-omics
// representation learner. Commands: train, evaluate, interpret, synth, bench,
// check. Exit codes: 0 success, 1 verification/metric failure, 2 usage/IO
// error. Every command is deterministic given its resolved-config snapshot
// (bench timing values excepted).

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "poems/poems.hpp"

namespace fs = std::filesystem;
using namespace poems;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Registers a string-valued flag whose final value overrides a config key.
void map_option(CLI::App* sub, const std::string& flag, const std::string& key,
                const std::string& desc, Overrides& overrides) {
    sub->add_option_function<std::string>(
        flag, [key, &overrides](const std::string& v) { overrides.emplace_back(key, v); }, desc);
}

/// Flags shared by every command. --config is the file; the rest become keys.
void add_common(CLI::App* sub, std::string& config_path, Overrides& overrides) {
    sub->add_option("--config", config_path, "key=value config file");
    map_option(sub, "--out", "out", "output directory (default poems_out)", overrides);
    map_option(sub, "--seed", "seed", "base seed for split/train/synth (default 21)", overrides);
}

/// Flags shared by the commands that read omics CSV inputs.
void add_data_options(CLI::App* sub, Overrides& overrides) {
    sub->add_option_function<std::vector<std::string>>(
        "--data",
        [&overrides](const std::vector<std::string>& specs) {
            for (const auto& s : specs) {
                const auto eq = s.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw CLI::ValidationError("--data", "expected <name>=<path>, got '" + s +
                                                             "'");
                overrides.emplace_back("data." + s.substr(0, eq), s.substr(eq + 1));
            }
        },
        "omic input as <name>=<path>; repeat once per modality");
    map_option(sub, "--labels", "data.labels", "sample_id,subtype CSV", overrides);
    map_option(sub, "--standardize", "data.standardize",
               "z-score features with train-split statistics (default 1)", overrides);
}

// ---------------------------------------------------------------------------
// Shared pipeline
// ---------------------------------------------------------------------------

struct Pipeline {
    MultiOmicsDataset ds;
    SplitSpec split_spec;
};

MultiOmicsDataset load_dataset(const RunConfig& cfg) {
    const auto paths = cfg.omic_paths();
    if (paths.empty())
        throw ingest_error("no omic inputs configured; pass --data <name>=<path> "
                           "or data.<name> config keys");
    std::vector<OmicsMatrix> mats;
    mats.reserve(paths.size());
    for (const auto& [name, path] : paths) mats.push_back(load_omics_csv(path, name));

    std::map<std::string, std::string> labels;
    const std::string labels_path = cfg.get_string("data.labels", "");
    if (!labels_path.empty()) labels = load_labels_csv(labels_path);

    std::vector<std::string> dropped;
    MultiOmicsDataset ds = align(mats, labels, &dropped);
    if (!dropped.empty())
        std::fprintf(stderr, "note: dropped %zu sample id(s) not present in every input\n",
                     dropped.size());
    return ds;
}

Pipeline prepare(const RunConfig& cfg) {
    Pipeline p;
    p.ds = load_dataset(cfg);
    p.split_spec = split(p.ds, cfg.get_u64("split.seed", cfg.base_seed()));
    if (!p.split_spec.warning.empty())
        std::fprintf(stderr, "note: %s\n", p.split_spec.warning.c_str());
    if (cfg.get_bool("data.standardize", true)) {
        auto [std_ds, stats] = standardize(p.ds, p.split_spec);
        p.ds = std::move(std_ds);
        (void)stats;
    }
    return p;
}

/// Model directory for evaluate/interpret: model.dir if set, else <out>/model.
std::string model_dir_for(const RunConfig& cfg, const std::string& out_dir) {
    return cfg.get_string("model.dir", out_dir + "/model");
}

/// Dataset modality matching a trained omic, by name.
const OmicsMatrix& omic_by_name(const MultiOmicsDataset& ds, const OmicParams& om) {
    for (const auto& m : ds.omics) {
        if (m.name != om.name) continue;
        if (m.values.cols != om.n_features)
            throw contract_error("modality '" + om.name + "': model expects " +
                                 std::to_string(om.n_features) + " features, data has " +
                                 std::to_string(m.values.cols));
        return m;
    }
    throw contract_error("modality '" + om.name + "' required by the model is not configured");
}

std::vector<std::size_t> indices_for_split(const SplitSpec& spec, std::size_t n,
                                           const std::string& which) {
    if (which == "train") return spec.train;
    if (which == "val") return spec.val;
    if (which == "test") return spec.test;
    if (which == "all") {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        return idx;
    }
    throw ingest_error("config key 'interpret.split': expected train/val/test/all, got '" +
                       which + "'");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_train(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    Pipeline p = prepare(cfg);
    const TrainConfig tc = cfg.train_config();

    const MultiOmicsDataset train_set = subset(p.ds, p.split_spec.train);
    const MultiOmicsDataset val_set = subset(p.ds, p.split_spec.val);
    std::printf("train: %zu train / %zu val samples, %zu modalities, K=%zu\n",
                train_set.n_samples(), val_set.n_samples(), p.ds.omics.size(),
                tc.model.latent_dim);

    const TrainResult res = train(train_set, val_set, tc);

    save_model(res.model, res.ssl, out_dir + "/model");
    std::vector<std::string> omic_names;
    for (const auto& om : res.model.omics) omic_names.push_back(om.name);
    write_history_csv(res.history, omic_names, out_dir + "/history.csv");
    write_train_summary(res.history, out_dir + "/train_summary.txt");
    cfg.write_resolved(out_dir + "/config_resolved_train.txt");

    const LossBreakdown& best = res.history.epochs[res.history.best_epoch].val;
    std::printf("train: %zu epochs, best epoch %zu (val loss %.6g), %s\n",
                res.history.epochs.size(), res.history.best_epoch + 1, best.total,
                res.history.stop_reason.c_str());
    std::printf("train: wrote %s/model, history.csv, train_summary.txt, "
                "config_resolved_train.txt\n",
                out_dir.c_str());
    return 0;
}

int cmd_evaluate(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    Pipeline p = prepare(cfg);
    if (!p.ds.has_labels())
        throw contract_error("evaluate: subtype labels required (data.labels or --labels)");
    auto [params, ssl] = load_model(model_dir_for(cfg, out_dir));
    (void)ssl;
    for (const auto& om : params.omics) omic_by_name(p.ds, om);

    const EvalReport report =
        evaluate(params, p.ds, p.split_spec, cfg.eval_seeds(), cfg.get_size("eval.knn_k", 5));

    write_eval_csv(report, out_dir + "/eval_per_seed.csv");
    write_eval_summary(report, out_dir + "/eval_summary.txt");
    cfg.write_resolved(out_dir + "/config_resolved_evaluate.txt");

    std::printf("evaluate: %zu classes, %zu seeds\n", report.n_classes, report.seeds.size());
    std::printf("  acc_kmeans %.4f +/- %.4f\n", report.acc_kmeans.mean,
                report.acc_kmeans.std_dev);
    std::printf("  nmi_kmeans %.4f +/- %.4f\n", report.nmi_kmeans.mean,
                report.nmi_kmeans.std_dev);
    std::printf("  acc_knn    %.4f +/- %.4f\n", report.acc_knn.mean, report.acc_knn.std_dev);
    std::printf("evaluate: wrote %s/eval_per_seed.csv, eval_summary.txt\n", out_dir.c_str());
    return 0;
}

int cmd_interpret(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    Pipeline p = prepare(cfg);
    auto [params, ssl] = load_model(model_dir_for(cfg, out_dir));
    (void)ssl;

    const std::vector<std::size_t> indices = indices_for_split(
        p.split_spec, p.ds.n_samples(), cfg.get_string("interpret.split", "all"));
    const std::size_t top_k = cfg.get_size("interpret.top_k", 10);
    const double threshold = cfg.get_double("interpret.threshold", 0.01);

    for (const auto& om : params.omics) {
        const OmicsMatrix& m = omic_by_name(p.ds, om);
        const BiomarkerReport report = top_features_per_factor(om.loadings, m.feature_names,
                                                               top_k);
        if (!report.warning.empty())
            std::fprintf(stderr, "note: %s: %s\n", om.name.c_str(), report.warning.c_str());
        write_biomarkers_csv(report, out_dir + "/biomarkers_" + om.name + ".csv");
        std::ofstream txt(out_dir + "/biomarkers_" + om.name + ".txt");
        if (!txt) throw ingest_error("cannot open " + out_dir + "/biomarkers_" + om.name +
                                     ".txt for writing");
        txt << biomarker_summary(report);
        write_active_map_csv(om.loadings, m.feature_names, threshold,
                             out_dir + "/active_map_" + om.name + ".csv");
    }

    const GatingReport gr = gating_report(params, p.ds, indices);
    write_gating_csv(gr, out_dir + "/gating.csv");

    const Matrix emb = fused_embedding(params, modality_batches(p.ds, indices)).mean;

    std::size_t n_clusters = cfg.get_size("interpret.clusters", 0);
    if (n_clusters == 0) {
        if (!p.ds.has_labels())
            throw contract_error("interpret: set interpret.clusters (no labels to infer a "
                                 "cluster count from)");
        std::set<std::string> distinct;
        for (std::size_t i : indices) distinct.insert(p.ds.labels[i]);
        n_clusters = distinct.size();
    }
    const LabelVector clusters =
        kmeans(emb, n_clusters, cfg.get_u64("interpret.kmeans_seed", cfg.base_seed()));
    const LatentExport latents = export_latents(params, p.ds, indices, clusters.labels);
    write_latents_csv(latents, out_dir + "/latents_sorted.csv");

    if (p.ds.has_labels()) {
        std::vector<std::string> sub_labels;
        sub_labels.reserve(indices.size());
        for (std::size_t i : indices) sub_labels.push_back(p.ds.labels[i]);

        const CorrelationMatrix latent_cm = subtype_correlation(emb, sub_labels);
        if (!latent_cm.warning.empty())
            std::fprintf(stderr, "note: latent correlation: %s\n", latent_cm.warning.c_str());
        write_correlation_csv(latent_cm, out_dir + "/subtype_corr_latent.csv");

        std::size_t total_d = 0;
        for (const auto& m : p.ds.omics) total_d += m.values.cols;
        Matrix inputs(indices.size(), total_d);
        std::size_t col0 = 0;
        for (const auto& m : p.ds.omics) {
            for (std::size_t r = 0; r < indices.size(); ++r)
                for (std::size_t c = 0; c < m.values.cols; ++c)
                    inputs(r, col0 + c) = m.values(indices[r], c);
            col0 += m.values.cols;
        }
        const CorrelationMatrix input_cm = subtype_correlation(inputs, sub_labels);
        if (!input_cm.warning.empty())
            std::fprintf(stderr, "note: input correlation: %s\n", input_cm.warning.c_str());
        write_correlation_csv(input_cm, out_dir + "/subtype_corr_input.csv");
    } else {
        std::fprintf(stderr, "note: no labels; skipping subtype correlation reports\n");
    }

    cfg.write_resolved(out_dir + "/config_resolved_interpret.txt");
    std::printf("interpret: wrote biomarker, gating, latent and correlation reports to %s "
                "(%zu samples, %zu clusters)\n",
                out_dir.c_str(), indices.size(), n_clusters);
    return 0;
}

int cmd_synth(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    const SynthData data = synth_generate(cfg.synth_spec());

    for (const auto& om : data.dataset.omics)
        save_omics_csv(om, out_dir + "/synth_" + om.name + ".csv");
    save_labels_csv(data.dataset.sample_ids(), data.dataset.labels,
                    out_dir + "/synth_labels.csv");
    for (const auto& fl : data.true_loadings)
        write_matrix_csv(fl.w, out_dir + "/true_loadings_" + fl.omic + ".csv");
    cfg.write_resolved(out_dir + "/config_resolved_synth.txt");

    std::printf("synth: %zu samples, %zu modalities -> %s\n", data.dataset.n_samples(),
                data.dataset.omics.size(), out_dir.c_str());
    return 0;
}

int cmd_bench(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    const BenchReport report = run_decode_bench(
        cfg.get_size("bench.n", 256), cfg.get_size("bench.d", 1000), cfg.get_size("bench.k", 32),
        cfg.get_size("bench.reps", 5), cfg.get_u64("bench.seed", 7));

    const double tol = 1e-10;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "sizes: N=%zu D=%zu K=%zu, reps=%zu\n"
                  "median vectorized: %.6f s\n"
                  "median reference:  %.6f s\n"
                  "speedup: %.2fx\n"
                  "max deviation: %.3e (tolerance %.1e)\n",
                  report.n, report.d, report.k, report.reps, report.median_vectorized,
                  report.median_reference, report.speedup, report.max_deviation, tol);
    std::ofstream out(out_dir + "/bench.txt");
    if (!out) throw ingest_error("cannot open " + out_dir + "/bench.txt for writing");
    out << buf;
    out.close();
    cfg.write_resolved(out_dir + "/config_resolved_bench.txt");
    std::fputs(buf, stdout);

    if (report.max_deviation > tol) {
        std::fprintf(stderr, "bench: FAIL: decode paths deviate by %.3e (> %.1e)\n",
                     report.max_deviation, tol);
        return 1;
    }
    return 0;
}

int cmd_check(RunConfig& cfg) {
    const std::string out_dir = cfg.get_string("out", "poems_out");
    fs::create_directories(out_dir);
    const std::vector<CheckResult> results = run_all_checks(
        cfg.get_size("check.metric_max_len", 8), cfg.get_size("check.poe_cases", 100));

    std::string text;
    std::vector<std::string> failing;
    for (const auto& r : results) {
        char line[512];
        std::snprintf(line, sizeof line, "[%s] %s: max_err=%.3e tol=%.1e (%s)\n",
                      r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_err, r.tolerance,
                      r.detail.c_str());
        text += line;
        if (!r.passed) failing.push_back(r.name);
    }
    std::ofstream out(out_dir + "/checks.txt");
    if (!out) throw ingest_error("cannot open " + out_dir + "/checks.txt for writing");
    out << text;
    out.close();
    cfg.write_resolved(out_dir + "/config_resolved_check.txt");
    std::fputs(text.c_str(), stdout);

    if (!failing.empty()) {
        std::string names;
        for (const auto& n : failing) {
            if (!names.empty()) names += ", ";
            names += n;
        }
        std::fprintf(stderr, "check: FAIL: %s\n", names.c_str());
        return 1;
    }
    std::printf("check: all %zu checks passed\n", results.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"poems: gated product-of-experts multi-omics representation learner"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides overrides;

    CLI::App* s_train = app.add_subcommand("train", "fit the model and persist it");
    add_common(s_train, config_path, overrides);
    add_data_options(s_train, overrides);
    map_option(s_train, "--epochs", "train.epochs", "training epochs (default 5000)", overrides);
    map_option(s_train, "--batch-size", "train.batch_size", "minibatch size (default 512)",
               overrides);
    map_option(s_train, "--lr", "train.lr", "learning rate (default 9e-4)", overrides);
    map_option(s_train, "--weight-decay", "train.weight_decay", "weight decay (default 1e-4)",
               overrides);
    map_option(s_train, "--patience", "train.patience", "early-stop patience (default 100)",
               overrides);
    map_option(s_train, "--latent-dim", "model.latent_dim", "latent factors K (default 32)",
               overrides);
    map_option(s_train, "--lambda0", "ssl.lambda0", "spike scale (default 10)", overrides);
    map_option(s_train, "--lambda1", "ssl.lambda1", "slab scale (default 1)", overrides);
    map_option(s_train, "--learn-obs-variance", "model.learn_obs_variance",
               "learn per-feature observation variance (0/1, default 0)", overrides);

    CLI::App* s_eval = app.add_subcommand("evaluate", "cluster/KNN metrics on the test split");
    add_common(s_eval, config_path, overrides);
    add_data_options(s_eval, overrides);
    map_option(s_eval, "--model", "model.dir", "model directory (default <out>/model)",
               overrides);
    map_option(s_eval, "--seeds", "eval.seeds", "comma-separated seeds (default 0,12,21,42,1234)",
               overrides);
    map_option(s_eval, "--knn-k", "eval.knn_k", "KNN neighbor count (default 5)", overrides);

    CLI::App* s_interp = app.add_subcommand("interpret", "biomarker/gating/latent reports");
    add_common(s_interp, config_path, overrides);
    add_data_options(s_interp, overrides);
    map_option(s_interp, "--model", "model.dir", "model directory (default <out>/model)",
               overrides);
    map_option(s_interp, "--split", "interpret.split", "rows to report: train/val/test/all",
               overrides);
    map_option(s_interp, "--top-k", "interpret.top_k", "features per factor (default 10)",
               overrides);
    map_option(s_interp, "--threshold", "interpret.threshold",
               "active-loading threshold (default 0.01)", overrides);
    map_option(s_interp, "--clusters", "interpret.clusters",
               "k-means cluster count (default: subtype count)", overrides);

    CLI::App* s_synth = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
    add_common(s_synth, config_path, overrides);
    map_option(s_synth, "--n", "synth.n_samples", "sample count (default 200)", overrides);
    map_option(s_synth, "--latent-dim", "synth.latent_dim", "true factor count (default 8)",
               overrides);
    map_option(s_synth, "--classes", "synth.n_classes", "mixture components (default 4)",
               overrides);
    map_option(s_synth, "--noise", "synth.noise_scale", "observation noise (default 0.1)",
               overrides);
    map_option(s_synth, "--separation", "synth.separation", "class separation (default 5)",
               overrides);
    map_option(s_synth, "--omics", "synth.omics",
               "features:block:active_prob triplets, comma separated", overrides);

    CLI::App* s_bench = app.add_subcommand("bench", "time the sparse decoder fast path");
    add_common(s_bench, config_path, overrides);
    map_option(s_bench, "--n", "bench.n", "batch rows (default 256)", overrides);
    map_option(s_bench, "--d", "bench.d", "features (default 1000)", overrides);
    map_option(s_bench, "--k", "bench.k", "latent factors (default 32)", overrides);
    map_option(s_bench, "--reps", "bench.reps", "repetitions, >= 5 (default 5)", overrides);

    CLI::App* s_check = app.add_subcommand("check", "run the verification suite");
    add_common(s_check, config_path, overrides);
    map_option(s_check, "--metric-len", "check.metric_max_len",
               "max label-vector length to enumerate (default 8)", overrides);
    map_option(s_check, "--poe-cases", "check.poe_cases",
               "randomized fusion oracle cases (default 100)", overrides);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        for (const auto& [key, value] : overrides) cfg.set(key, value);

        if (s_train->parsed()) return cmd_train(cfg);
        if (s_eval->parsed()) return cmd_evaluate(cfg);
        if (s_interp->parsed()) return cmd_interpret(cfg);
        if (s_synth->parsed()) return cmd_synth(cfg);
        if (s_bench->parsed()) return cmd_bench(cfg);
        if (s_check->parsed()) return cmd_check(cfg);
        std::fprintf(stderr, "poems: no command selected\n");
        return 2;
    } catch (const ingest_error& e) {
        std::fprintf(stderr, "poems: ingest: %s\n", e.what());
        return 2;
    } catch (const contract_error& e) {
        std::fprintf(stderr, "poems: contract: %s\n", e.what());
        return 2;
    } catch (const shape_error& e) {
        std::fprintf(stderr, "poems: shape: %s\n", e.what());
        return 2;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "poems: numeric: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "poems: %s\n", e.what());
        return 1;
    }
}
