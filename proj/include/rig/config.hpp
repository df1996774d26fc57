#pragma once

#include <cctype>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rig/agent.hpp"
#include "rig/pipeline.hpp"
#include "rig/seqmodel.hpp"
#include "rig/train.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

// One flat, fully-defaulted configuration for every subcommand.  Files use
// INI syntax; every key must be known (typos are configuration errors, not
// silent defaults).  The config hash covers the canonical serialization of
// the *effective* values, so two runs hash equal iff they agree everywhere.
struct RunConfig {
    // [run]
    uint64_t seed = 42;

    // [world]
    int world_size = 16;
    std::string task = "collect_wood";
    std::string tool_mode = "manual";
    int budget_steps = 500;

    // [model]
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int context_len = 1024;
    double init_std = 0.02;

    // [data]
    int pack_len = 256;
    int64_t seed_start = 1000;
    int s0_count = 30;
    int s1_count = 450;
    int s2_count = 200;
    int s3_count = 30;
    int s4_count = 40;
    int s4_depth = 3;
    double s3_temperature = 0.8;
    double s4_temperature = 0.8;
    int max_neg_turns = 4;
    int collect_budget = 32;
    int tower_budget = 64;
    int explore_budget = 150;
    double s0_pitch_noise = 2.0;
    double s0_yaw_noise = 2.0;
    int s0_spike_every = 17;

    // [train]
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    double clip = 1.0;
    int warmup = 100;
    int total_steps = 3000;
    int batch_rows = 4;
    double heldout_fraction = 0.05;
    double target_action_accuracy = 0.9;
    int eval_every = 100;
    int log_every = 10;
    int s3_repeat = 4;
    int s4_repeat = 2;
    bool use_reason = true;
    bool use_action = true;
    bool use_frame = true;

    // [agent]
    double temperature = 0.0;
    int lookahead = 0;
    int max_reason = 32;
    int max_action = 10;

    // [eval]
    int64_t eval_seed_start = 900000;
    int eval_episodes = 20;
    int eval_max_steps = 40;
};

namespace config_detail {

struct Field {
    std::string section, key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline int64_t parse_int(const std::string& s) {
    size_t used = 0;
    int64_t v;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("not an integer: '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("not an integer: '" + s + "'");
    return v;
}

inline double parse_double(const std::string& s) {
    size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

inline const std::vector<Field>& registry() {
    static const std::vector<Field> kFields = [] {
        std::vector<Field> f;
        auto add_u64 = [&](const char* sec, const char* key, uint64_t RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) {
                             int64_t x = parse_int(v);
                             if (x < 0) throw ConfigError("must be nonnegative");
                             c.*m = static_cast<uint64_t>(x);
                         },
                         [m](const RunConfig& c) { return std::to_string(c.*m); }});
        };
        auto add_i64 = [&](const char* sec, const char* key, int64_t RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) { c.*m = parse_int(v); },
                         [m](const RunConfig& c) { return std::to_string(c.*m); }});
        };
        auto add_int = [&](const char* sec, const char* key, int RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) {
                             c.*m = static_cast<int>(parse_int(v));
                         },
                         [m](const RunConfig& c) { return std::to_string(c.*m); }});
        };
        auto add_dbl = [&](const char* sec, const char* key, double RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) { c.*m = parse_double(v); },
                         [m](const RunConfig& c) { return fmt_double(c.*m); }});
        };
        auto add_bool = [&](const char* sec, const char* key, bool RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); },
                         [m](const RunConfig& c) { return (c.*m) ? "true" : "false"; }});
        };
        auto add_str = [&](const char* sec, const char* key, std::string RunConfig::* m) {
            f.push_back({sec, key,
                         [m](RunConfig& c, const std::string& v) { c.*m = v; },
                         [m](const RunConfig& c) { return c.*m; }});
        };

        add_u64("run", "seed", &RunConfig::seed);

        add_int("world", "size", &RunConfig::world_size);
        add_str("world", "task", &RunConfig::task);
        add_str("world", "tool_mode", &RunConfig::tool_mode);
        add_int("world", "budget_steps", &RunConfig::budget_steps);

        add_int("model", "n_layers", &RunConfig::n_layers);
        add_int("model", "n_heads", &RunConfig::n_heads);
        add_int("model", "d_model", &RunConfig::d_model);
        add_int("model", "d_ff", &RunConfig::d_ff);
        add_int("model", "context_len", &RunConfig::context_len);
        add_dbl("model", "init_std", &RunConfig::init_std);

        add_int("data", "pack_len", &RunConfig::pack_len);
        add_i64("data", "seed_start", &RunConfig::seed_start);
        add_int("data", "s0_count", &RunConfig::s0_count);
        add_int("data", "s1_count", &RunConfig::s1_count);
        add_int("data", "s2_count", &RunConfig::s2_count);
        add_int("data", "s3_count", &RunConfig::s3_count);
        add_int("data", "s4_count", &RunConfig::s4_count);
        add_int("data", "s4_depth", &RunConfig::s4_depth);
        add_dbl("data", "s3_temperature", &RunConfig::s3_temperature);
        add_dbl("data", "s4_temperature", &RunConfig::s4_temperature);
        add_int("data", "max_neg_turns", &RunConfig::max_neg_turns);
        add_int("data", "collect_budget", &RunConfig::collect_budget);
        add_int("data", "tower_budget", &RunConfig::tower_budget);
        add_int("data", "explore_budget", &RunConfig::explore_budget);
        add_dbl("data", "s0_pitch_noise", &RunConfig::s0_pitch_noise);
        add_dbl("data", "s0_yaw_noise", &RunConfig::s0_yaw_noise);
        add_int("data", "s0_spike_every", &RunConfig::s0_spike_every);

        add_dbl("train", "lr", &RunConfig::lr);
        add_dbl("train", "beta1", &RunConfig::beta1);
        add_dbl("train", "beta2", &RunConfig::beta2);
        add_dbl("train", "adam_eps", &RunConfig::adam_eps);
        add_dbl("train", "weight_decay", &RunConfig::weight_decay);
        add_dbl("train", "clip", &RunConfig::clip);
        add_int("train", "warmup", &RunConfig::warmup);
        add_int("train", "total_steps", &RunConfig::total_steps);
        add_int("train", "batch_rows", &RunConfig::batch_rows);
        add_dbl("train", "heldout_fraction", &RunConfig::heldout_fraction);
        add_dbl("train", "target_action_accuracy", &RunConfig::target_action_accuracy);
        add_int("train", "eval_every", &RunConfig::eval_every);
        add_int("train", "log_every", &RunConfig::log_every);
        add_int("train", "s3_repeat", &RunConfig::s3_repeat);
        add_int("train", "s4_repeat", &RunConfig::s4_repeat);
        add_bool("train", "use_reason", &RunConfig::use_reason);
        add_bool("train", "use_action", &RunConfig::use_action);
        add_bool("train", "use_frame", &RunConfig::use_frame);

        add_dbl("agent", "temperature", &RunConfig::temperature);
        add_int("agent", "lookahead", &RunConfig::lookahead);
        add_int("agent", "max_reason", &RunConfig::max_reason);
        add_int("agent", "max_action", &RunConfig::max_action);

        add_i64("eval", "seed_start", &RunConfig::eval_seed_start);
        add_int("eval", "episodes", &RunConfig::eval_episodes);
        add_int("eval", "max_steps", &RunConfig::eval_max_steps);
        return f;
    }();
    return kFields;
}

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace config_detail

// Applies one "section.key = value" assignment.
inline void config_set(RunConfig& cfg, const std::string& section, const std::string& key,
                       const std::string& value) {
    for (const auto& fld : config_detail::registry()) {
        if (fld.section == section && fld.key == key) {
            try {
                fld.set(cfg, value);
            } catch (const ConfigError& e) {
                throw ConfigError(section + "." + key + ": " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown config key: " + section + "." + key);
}

// INI parser: [section] headers, key = value lines, # or ; comments.
inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        size_t cut = line.find_first_of("#;");
        if (cut != std::string::npos) line = line.substr(0, cut);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section");
            section = config_detail::trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = config_detail::trim(line.substr(0, eq));
        std::string value = config_detail::trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside section");
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        std::string full = section + "." + key;
        if (!seen.emplace(full, lineno).second)
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + full);
        config_set(cfg, section, key, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Canonical form: every known key as "section.key=value\n", sorted by the
// full dotted name, with effective (post-default) values.
inline std::string canonical_config(const RunConfig& cfg) {
    std::map<std::string, std::string> kv;
    for (const auto& fld : config_detail::registry())
        kv[fld.section + "." + fld.key] = fld.get(cfg);
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += "=";
        out += v;
        out += "\n";
    }
    return out;
}

inline std::string config_hash(const RunConfig& cfg) {
    std::string canon = canonical_config(cfg);
    uint64_t h = fnv1a64_bytes(canon.data(), canon.size());
    static const char* kHexDigits = "0123456789abcdef";
    std::string s(16, '0');
    uint64_t v = h;
    for (int i = 15; i >= 0; --i) {
        s[i] = kHexDigits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Derived option structs
// ---------------------------------------------------------------------------

inline void validate_config(const RunConfig& c) {
    if (c.world_size < 8 || c.world_size > 64) throw ConfigError("world.size out of range [8,64]");
    if (c.budget_steps <= 0) throw ConfigError("world.budget_steps must be positive");
    task_kind_from_name(c.task);        // throws on unknown
    tool_mode_from_name(c.tool_mode);
    if (c.pack_len < 64) throw ConfigError("data.pack_len too small");
    if (c.pack_len > c.context_len) throw ConfigError("data.pack_len exceeds model.context_len");
    if (c.heldout_fraction < 0.0 || c.heldout_fraction >= 1.0)
        throw ConfigError("train.heldout_fraction out of [0,1)");
    if (c.batch_rows <= 0) throw ConfigError("train.batch_rows must be positive");
    if (c.total_steps <= 0) throw ConfigError("train.total_steps must be positive");
    if (c.lookahead < 0) throw ConfigError("agent.lookahead must be nonnegative");
    if (c.max_reason < 1 || c.max_action < 1) throw ConfigError("agent sampling caps must be positive");
    if (c.temperature < 0.0) throw ConfigError("agent.temperature must be nonnegative");
    if (c.eval_episodes <= 0) throw ConfigError("eval.episodes must be positive");
    if (c.s4_depth < 0) throw ConfigError("data.s4_depth must be nonnegative");
    if (c.eval_max_steps <= 0) throw ConfigError("eval.max_steps must be positive");
}

inline TaskSpec task_spec_of(const RunConfig& c) {
    TaskSpec t;
    t.kind = task_kind_from_name(c.task);
    t.tool_mode = tool_mode_from_name(c.tool_mode);
    t.budget_steps = c.budget_steps;
    return t;
}

inline ModelConfig model_config_of(const RunConfig& c, int vocab) {
    ModelConfig m;
    m.n_layers = c.n_layers;
    m.n_heads = c.n_heads;
    m.d_model = c.d_model;
    m.d_ff = c.d_ff;
    m.context_len = c.context_len;
    m.vocab = vocab;
    m.init_std = c.init_std;
    m.init_seed = split(c.seed, "init");
    m.validate();
    return m;
}

inline StageOptions stage_options_of(const RunConfig& c) {
    StageOptions o;
    o.world_size = c.world_size;
    o.seed_start = c.seed_start;
    o.s0_count = c.s0_count;
    o.s1_count = c.s1_count;
    o.s2_count = c.s2_count;
    o.s3_count = c.s3_count;
    o.s4_count = c.s4_count;
    o.s4_depth = c.s4_depth;
    o.s3_temperature = c.s3_temperature;
    o.s4_temperature = c.s4_temperature;
    o.max_neg_turns = c.max_neg_turns;
    o.collect_budget = c.collect_budget;
    o.tower_budget = c.tower_budget;
    o.explore_budget = c.explore_budget;
    o.s0_pitch_noise = c.s0_pitch_noise;
    o.s0_yaw_noise = c.s0_yaw_noise;
    o.s0_spike_every = c.s0_spike_every;
    o.limits.max_reason = c.max_reason;
    o.limits.max_action = c.max_action;
    return o;
}

inline TrainOptions train_options_of(const RunConfig& c) {
    TrainOptions t;
    t.opt.lr = c.lr;
    t.opt.beta1 = c.beta1;
    t.opt.beta2 = c.beta2;
    t.opt.eps = c.adam_eps;
    t.opt.weight_decay = c.weight_decay;
    t.opt.clip = c.clip;
    t.opt.warmup = c.warmup;
    t.opt.total_steps = c.total_steps;
    t.batch_rows = c.batch_rows;
    t.data_seed = split(c.seed, "data");
    t.heldout_fraction = c.heldout_fraction;
    t.target_action_accuracy = c.target_action_accuracy;
    t.eval_every = c.eval_every;
    t.log_every = c.log_every;
    t.flags.use_reason = c.use_reason;
    t.flags.use_action = c.use_action;
    t.flags.use_frame = c.use_frame;
    return t;
}

inline AgentOptions agent_options_of(const RunConfig& c) {
    AgentOptions a;
    a.temperature = c.temperature;
    a.lookahead = c.lookahead;
    a.sample_seed = split(c.seed, "agent");
    a.limits.max_reason = c.max_reason;
    a.limits.max_action = c.max_action;
    return a;
}

}  // namespace rig
