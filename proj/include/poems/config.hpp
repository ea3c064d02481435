#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "poems/data.hpp"
#include "poems/io.hpp"
#include "poems/objective.hpp"

namespace poems {

/// Flat key=value run configuration with dotted section keys
/// (e.g. train.epochs=5000). Values from a config file can be overridden by
/// command-line flags before any typed read. Every typed read records the
/// final value, so write_resolved() produces a snapshot that replays the run
/// bit-exactly.
struct RunConfig {
    std::map<std::string, std::string> kv;
    mutable std::map<std::string, std::string> resolved;

    static RunConfig from_file(const std::string& path) {
        RunConfig c;
        c.kv = read_key_values(path);
        return c;
    }

    void set(const std::string& key, const std::string& value) { kv[key] = value; }
    bool has(const std::string& key) const { return kv.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        const auto it = kv.find(key);
        const std::string v = it == kv.end() ? def : it->second;
        resolved[key] = v;
        return v;
    }

    double get_double(const std::string& key, double def) const {
        double v = def;
        const auto it = kv.find(key);
        if (it != kv.end()) v = parse_double(key, it->second);
        resolved[key] = format_g17(v);
        return v;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
        std::uint64_t v = def;
        const auto it = kv.find(key);
        if (it != kv.end()) v = parse_u64(key, it->second);
        resolved[key] = std::to_string(v);
        return v;
    }

    std::size_t get_size(const std::string& key, std::size_t def) const {
        return static_cast<std::size_t>(get_u64(key, def));
    }

    bool get_bool(const std::string& key, bool def) const {
        bool v = def;
        const auto it = kv.find(key);
        if (it != kv.end()) {
            if (it->second == "1" || it->second == "true")
                v = true;
            else if (it->second == "0" || it->second == "false")
                v = false;
            else
                throw ingest_error("config key '" + key + "': expected 0/1/true/false, got '" +
                                   it->second + "'");
        }
        resolved[key] = v ? "1" : "0";
        return v;
    }

    std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                            const std::vector<std::uint64_t>& def) const {
        std::vector<std::uint64_t> v = def;
        const auto it = kv.find(key);
        if (it != kv.end()) {
            v.clear();
            std::vector<std::string> cells;
            detail::split_csv_line(it->second, cells);
            for (const auto& c : cells) v.push_back(parse_u64(key, c));
        }
        std::string joined;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) joined += ',';
            joined += std::to_string(v[i]);
        }
        resolved[key] = joined;
        return v;
    }

    // -- assembled module configs --------------------------------------------

    /// Base seed shared by split/train/synth unless a section overrides it.
    std::uint64_t base_seed() const { return get_u64("seed", 21); }

    TrainConfig train_config() const {
        TrainConfig t;
        const std::uint64_t seed = base_seed();
        t.epochs = get_size("train.epochs", 5000);
        t.batch_size = get_size("train.batch_size", 512);
        t.lr = get_double("train.lr", 9e-4);
        t.weight_decay = get_double("train.weight_decay", 1e-4);
        t.patience = get_size("train.patience", 100);
        t.seed = get_u64("train.seed", seed);
        t.model.latent_dim = get_size("model.latent_dim", 32);
        t.model.encoder_hidden = get_size("model.encoder_hidden", 256);
        t.model.gating_hidden = get_size("model.gating_hidden", 64);
        t.model.decoder_hidden = get_size("model.decoder_hidden", 64);
        t.model.logvar_clamp = get_double("model.logvar_clamp", 10.0);
        t.model.learn_obs_variance = get_bool("model.learn_obs_variance", false);
        t.ssl_lambda0 = get_double("ssl.lambda0", 10.0);
        t.ssl_lambda1 = get_double("ssl.lambda1", 1.0);
        t.ssl_a = get_double("ssl.a", 1.0);
        t.ssl_b = get_double("ssl.b", 1.0);
        return t;
    }

    SynthSpec synth_spec() const {
        SynthSpec s;
        s.n_samples = get_size("synth.n_samples", s.n_samples);
        s.latent_dim = get_size("synth.latent_dim", s.latent_dim);
        s.n_classes = get_size("synth.n_classes", s.n_classes);
        s.noise_scale = get_double("synth.noise_scale", s.noise_scale);
        s.separation = get_double("synth.separation", s.separation);
        s.seed = get_u64("synth.seed", base_seed());
        // features:block_size:active_prob triplets, comma separated
        const std::string def = "40:5:0.1,30:4:0.1";
        const std::string spec_str = get_string("synth.omics", def);
        s.omics.clear();
        std::vector<std::string> cells;
        detail::split_csv_line(spec_str, cells);
        for (const auto& c : cells) {
            const auto c1 = c.find(':');
            const auto c2 = c.find(':', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw ingest_error("config key 'synth.omics': expected "
                                   "features:block_size:active_prob, got '" + c + "'");
            SynthOmicSpec os;
            os.n_features = static_cast<std::size_t>(parse_u64("synth.omics", c.substr(0, c1)));
            os.block_size =
                static_cast<std::size_t>(parse_u64("synth.omics", c.substr(c1 + 1, c2 - c1 - 1)));
            os.active_prob = parse_double("synth.omics", c.substr(c2 + 1));
            s.omics.push_back(os);
        }
        return s;
    }

    /// Omic input files: every data.<name>=<path> key, in name order.
    /// data.labels and data.standardize are reserved.
    std::vector<std::pair<std::string, std::string>> omic_paths() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& [key, value] : kv) {
            if (key.rfind("data.", 0) != 0) continue;
            const std::string name = key.substr(5);
            if (name == "labels" || name == "standardize") continue;
            resolved[key] = value;
            out.push_back({name, value});
        }
        return out;
    }

    std::vector<std::uint64_t> eval_seeds() const {
        return get_u64_list("eval.seeds", {0, 12, 21, 42, 1234});
    }

    /// Snapshot of every key the run consumed (canonical form) plus any
    /// file-supplied keys it did not touch.
    void write_resolved(const std::string& path) const {
        std::map<std::string, std::string> merged = kv;
        for (const auto& [k, v] : resolved) merged[k] = v;
        std::vector<std::pair<std::string, std::string>> rows(merged.begin(), merged.end());
        write_key_values(rows, path);
    }

private:
    // strtod, not stod: stod rejects subnormals that %.17g snapshots can emit
    static double parse_double(const std::string& key, const std::string& value) {
        char* end = nullptr;
        const double v = std::strtod(value.c_str(), &end);
        if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
            throw ingest_error("config key '" + key + "': non-numeric value '" + value + "'");
        return v;
    }

    static std::uint64_t parse_u64(const std::string& key, const std::string& value) {
        if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos)
            throw ingest_error("config key '" + key + "': expected a nonnegative integer, got '" +
                               value + "'");
        try {
            return std::stoull(value);
        } catch (const std::exception&) {
            throw ingest_error("config key '" + key + "': integer out of range: '" + value + "'");
        }
    }
};

} // namespace poems
