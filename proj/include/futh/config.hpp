#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "futh/data.hpp"
#include "futh/model.hpp"

namespace futh {

namespace confdetail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::int64_t parse_i64(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(where + ": '" + v + "' is not an integer");
    }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(where + ": '" + v + "' is not an unsigned integer");
    }
}

inline double parse_f64(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(where + ": '" + v + "' is not a number");
    }
}

inline bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(where + ": '" + v + "' is not a boolean (true|false)");
}

inline std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace confdetail

// Flat key = value run configuration. Unknown keys are rejected with their
// line number; every key has a default; effective() lists all resolved values.
struct RunConfig {
    // model
    std::string model_arch = "desk";  // desk | paper
    std::int64_t classes = 4;
    std::int64_t frames = 16;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t channels = 3;
    std::int64_t d_g = 64;
    std::int64_t d_f = 64;
    std::int64_t d_r = 128;
    // relation
    std::int64_t tuples_per_scale = 16;
    bool freeze_extractor = false;
    // fusion
    std::string fusion_method = "eq2";
    std::string fusion_append = "holistic";
    double fusion_dropout = 0.5;
    std::int64_t bilinear_rank = 8;
    // training
    std::int64_t batch = 6;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::int64_t epochs_holistic = 20;
    std::int64_t epochs_relation = 20;
    std::int64_t epochs_fusion = 30;
    double lr_holistic = 1e-3;
    double lr_relation = 1e-4;
    double lr_fusion = 1e-4;
    bool cache_frozen = true;  // phase 3: reuse frozen-pathway features per clip
    std::string init_from;     // optional checkpoint to warm-start parameters
    // data
    std::string train_manifest = "data/train.manifest";
    std::string test_manifest = "data/test.manifest";
    // synth-gen
    std::int64_t synth_train_clips = 200;
    std::int64_t synth_test_clips = 100;
    std::int64_t synth_patch = 12;
    double synth_speed = 2.0;
    double synth_noise = 0.03;
    bool synth_reversal = false;
    // run control
    std::uint64_t seed = 42;
    std::optional<std::uint64_t> seed_init;   // defaults derive from `seed`
    std::optional<std::uint64_t> seed_train;
    std::int64_t threads = 1;
    bool deterministic = true;
    std::int64_t precision = 32;  // 32 | 64

    std::uint64_t resolved_seed_init() const {
        return seed_init ? *seed_init : Rng(seed).child(1).seed();
    }
    std::uint64_t resolved_seed_train() const {
        return seed_train ? *seed_train : Rng(seed).child(2).seed();
    }

    struct Key {
        const char* name;
        std::function<void(RunConfig&, const std::string&, const std::string&)> set;
        std::function<std::string(const RunConfig&)> get;
    };

    static const std::vector<Key>& key_table() {
        using namespace confdetail;
        static const std::vector<Key> table = {
            {"model.arch",
             [](RunConfig& c, const std::string& v, const std::string& w) {
                 if (v != "desk" && v != "paper")
                     throw ConfigError(w + ": model.arch must be desk|paper, got '" + v + "'");
                 c.model_arch = v;
             },
             [](const RunConfig& c) { return c.model_arch; }},
            {"model.classes", [](RunConfig& c, const std::string& v, const std::string& w) { c.classes = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.classes); }},
            {"model.frames", [](RunConfig& c, const std::string& v, const std::string& w) { c.frames = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.frames); }},
            {"model.height", [](RunConfig& c, const std::string& v, const std::string& w) { c.height = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.height); }},
            {"model.width", [](RunConfig& c, const std::string& v, const std::string& w) { c.width = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.width); }},
            {"model.channels", [](RunConfig& c, const std::string& v, const std::string& w) { c.channels = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.channels); }},
            {"model.d_g", [](RunConfig& c, const std::string& v, const std::string& w) { c.d_g = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.d_g); }},
            {"model.d_f", [](RunConfig& c, const std::string& v, const std::string& w) { c.d_f = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.d_f); }},
            {"model.d_r", [](RunConfig& c, const std::string& v, const std::string& w) { c.d_r = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.d_r); }},
            {"relation.tuples_per_scale",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.tuples_per_scale = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.tuples_per_scale); }},
            {"relation.freeze_extractor",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.freeze_extractor = parse_bool(v, w); },
             [](const RunConfig& c) { return std::string(c.freeze_extractor ? "true" : "false"); }},
            {"fusion.method",
             [](RunConfig& c, const std::string& v, const std::string& w) {
                 try {
                     fusion_method_from_string(v);
                 } catch (const InputError& e) {
                     throw ConfigError(w + ": " + e.what());
                 }
                 c.fusion_method = v;
             },
             [](const RunConfig& c) { return c.fusion_method; }},
            {"fusion.append",
             [](RunConfig& c, const std::string& v, const std::string& w) {
                 try {
                     append_from_string(v);
                 } catch (const InputError& e) {
                     throw ConfigError(w + ": " + e.what());
                 }
                 c.fusion_append = v;
             },
             [](const RunConfig& c) { return c.fusion_append; }},
            {"fusion.dropout",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.fusion_dropout = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.fusion_dropout); }},
            {"fusion.bilinear_rank",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.bilinear_rank = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.bilinear_rank); }},
            {"train.batch", [](RunConfig& c, const std::string& v, const std::string& w) { c.batch = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.batch); }},
            {"train.momentum", [](RunConfig& c, const std::string& v, const std::string& w) { c.momentum = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.momentum); }},
            {"train.weight_decay",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.weight_decay = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.weight_decay); }},
            {"train.epochs.holistic",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.epochs_holistic = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.epochs_holistic); }},
            {"train.epochs.relation",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.epochs_relation = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.epochs_relation); }},
            {"train.epochs.fusion",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.epochs_fusion = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.epochs_fusion); }},
            {"train.lr.holistic",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.lr_holistic = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.lr_holistic); }},
            {"train.lr.relation",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.lr_relation = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.lr_relation); }},
            {"train.lr.fusion",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.lr_fusion = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.lr_fusion); }},
            {"train.cache_frozen",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.cache_frozen = parse_bool(v, w); },
             [](const RunConfig& c) { return std::string(c.cache_frozen ? "true" : "false"); }},
            {"train.init_from",
             [](RunConfig& c, const std::string& v, const std::string&) { c.init_from = v; },
             [](const RunConfig& c) { return c.init_from; }},
            {"data.train_manifest",
             [](RunConfig& c, const std::string& v, const std::string&) { c.train_manifest = v; },
             [](const RunConfig& c) { return c.train_manifest; }},
            {"data.test_manifest",
             [](RunConfig& c, const std::string& v, const std::string&) { c.test_manifest = v; },
             [](const RunConfig& c) { return c.test_manifest; }},
            {"synth.train_clips",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_train_clips = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.synth_train_clips); }},
            {"synth.test_clips",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_test_clips = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.synth_test_clips); }},
            {"synth.patch", [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_patch = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.synth_patch); }},
            {"synth.speed", [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_speed = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.synth_speed); }},
            {"synth.noise", [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_noise = parse_f64(v, w); },
             [](const RunConfig& c) { return fmt_f64(c.synth_noise); }},
            {"synth.reversal",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.synth_reversal = parse_bool(v, w); },
             [](const RunConfig& c) { return std::string(c.synth_reversal ? "true" : "false"); }},
            {"seed", [](RunConfig& c, const std::string& v, const std::string& w) { c.seed = parse_u64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.seed); }},
            {"seed.init", [](RunConfig& c, const std::string& v, const std::string& w) { c.seed_init = parse_u64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.resolved_seed_init()); }},
            {"seed.train", [](RunConfig& c, const std::string& v, const std::string& w) { c.seed_train = parse_u64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.resolved_seed_train()); }},
            {"threads", [](RunConfig& c, const std::string& v, const std::string& w) { c.threads = parse_i64(v, w); },
             [](const RunConfig& c) { return std::to_string(c.threads); }},
            {"deterministic",
             [](RunConfig& c, const std::string& v, const std::string& w) { c.deterministic = parse_bool(v, w); },
             [](const RunConfig& c) { return std::string(c.deterministic ? "true" : "false"); }},
            {"precision",
             [](RunConfig& c, const std::string& v, const std::string& w) {
                 c.precision = parse_i64(v, w);
                 if (c.precision != 32 && c.precision != 64)
                     throw ConfigError(w + ": precision must be 32 or 64");
             },
             [](const RunConfig& c) { return std::to_string(c.precision); }},
        };
        return table;
    }

    void set(const std::string& key, const std::string& value, const std::string& where) {
        for (const auto& k : key_table()) {
            if (key == k.name) {
                k.set(*this, value, where);
                return;
            }
        }
        throw ConfigError(where + ": unknown key '" + key + "'");
    }

    static RunConfig from_text(const std::string& text, const std::string& origin) {
        RunConfig c;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string where = origin + " line " + std::to_string(lineno);
            const std::string stripped = confdetail::trim(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ConfigError(where + ": expected `key = value`");
            const std::string key = confdetail::trim(stripped.substr(0, eq));
            const std::string value = confdetail::trim(stripped.substr(eq + 1));
            if (key.empty()) throw ConfigError(where + ": empty key");
            c.set(key, value, where);
        }
        c.validate();
        return c;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return from_text(ss.str(), "'" + path + "'");
    }

    void validate() const {
        if (classes < 1) throw ConfigError("model.classes must be positive");
        if (batch < 1) throw ConfigError("train.batch must be positive");
        if (threads < 1) throw ConfigError("threads must be positive");
        if (epochs_holistic < 0 || epochs_relation < 0 || epochs_fusion < 0)
            throw ConfigError("epoch counts must be non-negative");
        if (lr_holistic <= 0 || lr_relation <= 0 || lr_fusion <= 0)
            throw ConfigError("learning rates must be positive");
        if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
        if (fusion_dropout < 0 || fusion_dropout >= 1)
            throw ConfigError("fusion.dropout must be in [0,1)");
        if (synth_train_clips < 1 || synth_test_clips < 1)
            throw ConfigError("synth clip counts must be positive");
    }

    // canonical resolved listing, one `key = value` per line in table order
    std::string effective() const {
        std::string out;
        for (const auto& k : key_table()) {
            out += k.name;
            out += " = ";
            out += k.get(*this);
            out += "\n";
        }
        return out;
    }

    ModelSpec model_spec() const {
        ModelSpec s = model_arch == "paper"
                          ? make_paper_spec(classes)
                          : make_desk_spec(classes, frames, height, width, d_g, d_f, d_r);
        s.in_channels = model_arch == "paper" ? 3 : channels;
        s.relation.tuples_per_scale = tuples_per_scale;
        s.relation.freeze_extractor_in_phase2 = freeze_extractor;
        s.fusion.method = fusion_method_from_string(fusion_method);
        s.fusion.append = append_from_string(fusion_append);
        s.fusion.dropout = fusion_dropout;
        s.fusion.bilinear_rank = bilinear_rank;
        s.finalize();
        return s;
    }

    SyntheticSpec synth_spec() const {
        SyntheticSpec s;
        s.frames = frames;
        s.channels = channels;
        s.height = height;
        s.width = width;
        s.patch = synth_patch;
        s.speed = synth_speed;
        s.noise = synth_noise;
        s.reversal = synth_reversal;
        s.validate();
        return s;
    }
};

}  // namespace futh
