// rig — single command-line entry point.
//
// Subcommands: data, train, rollout, eval, ablate, sweep, inspect.
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric error.
// All randomness flows from one root seed: RIG_SEED env > --seed flag >
// config [run] seed; per-purpose streams are derived with split(seed, label).

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rig/config.hpp"
#include "rig/evalharness.hpp"

namespace fs = std::filesystem;
using namespace rig;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

uint64_t parse_seed(const std::string& s) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError("invalid seed value: " + s);
    }
}

struct GlobalOpts {
    std::string config_path;
    std::string seed_flag;  // empty = unset
    int jobs = 1;
};

RunConfig effective_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (!g.seed_flag.empty()) cfg.seed = parse_seed(g.seed_flag);
    if (const char* env = std::getenv("RIG_SEED")) cfg.seed = parse_seed(env);
    validate_config(cfg);
    return cfg;
}

void write_json(const fs::path& path, const ordered_json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    out << j.dump(2) << "\n";
    if (!out.good()) throw DataError("write failed: " + path.string());
}

ordered_json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ordered_json j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DataError("invalid JSON: " + path.string());
    return j;
}

// Stage files live under a dataset directory as <stage>.jsonl + manifest.
fs::path stage_file(const fs::path& dir, const std::string& stage) { return dir / (stage + ".jsonl"); }
fs::path stage_manifest(const fs::path& dir, const std::string& stage) {
    return dir / (stage + ".manifest.json");
}

// Loads one stage, cross-checking its manifest against the live tokenizer.
std::vector<Trajectory> load_stage(const fs::path& dir, const std::string& stage, const Tokenizer& tok) {
    std::vector<Trajectory> trajs = load_trajectories_jsonl(stage_file(dir, stage), tok);
    fs::path man = stage_manifest(dir, stage);
    if (fs::exists(man)) {
        ordered_json j = read_json(man);
        if (j.value("vocab_size", -1) != tok.layout.vocab_size())
            throw DataError(man.string() + ": vocab_size does not match tokenizer");
        if (j.value("image_codes", -1) != tok.layout.image_count)
            throw DataError(man.string() + ": image_codes does not match tokenizer");
        if (j.value("count", static_cast<size_t>(0)) != trajs.size())
            throw DataError(man.string() + ": count does not match trajectory file");
    }
    for (const Trajectory& tr : trajs)
        if (tr.source_stage != stage)
            throw DataError(stage_file(dir, stage).string() + ": trajectory " + tr.name +
                            " has source_stage " + tr.source_stage);
    return trajs;
}

// Loads every present stage among the requested ones; at least one must exist.
std::vector<std::vector<Trajectory>> load_stages(const fs::path& dir,
                                                 const std::vector<std::string>& stages,
                                                 const Tokenizer& tok,
                                                 std::vector<std::string>* found = nullptr) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    std::vector<std::vector<Trajectory>> out;
    for (const std::string& s : stages) {
        if (!fs::exists(stage_file(dir, s))) continue;
        out.push_back(load_stage(dir, s, tok));
        if (found) found->push_back(s);
    }
    if (out.empty())
        throw DataError("no stage files (" + [&] {
            std::string names;
            for (const std::string& s : stages) names += (names.empty() ? "" : ", ") + s + ".jsonl";
            return names;
        }() + ") under " + dir.string());
    return out;
}

void save_stage(const fs::path& dir, const std::string& stage, const std::vector<Trajectory>& trajs,
                const StageOptions& opts, const Tokenizer& tok, const std::string& hash) {
    fs::create_directories(dir);
    save_trajectories_jsonl(stage_file(dir, stage), trajs);
    write_stage_manifest(stage_manifest(dir, stage), stage, trajs.size(), opts, tok, hash);
    std::cout << stage << ": " << trajs.size() << " trajectories -> " << stage_file(dir, stage).string()
              << "\n";
}

Checkpoint load_ckpt_checked(const std::string& path, int vocab) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.cfg.vocab != vocab)
        throw DataError("checkpoint vocab " + std::to_string(ck.cfg.vocab) +
                        " does not match tokenizer vocab " + std::to_string(vocab));
    return ck;
}

// ---------------------------------------------------------------------------
// Episode serialization
// ---------------------------------------------------------------------------

ordered_json episode_to_json(const EpisodeRecord& ep, const std::string& hash,
                             const std::string& ckpt_checksum) {
    ordered_json j = report_header(hash, ckpt_checksum);
    j["world_seed"] = ep.world_seed;
    j["task"] = {{"kind", task_kind_name(ep.task.kind)},
                 {"tool_mode", tool_mode_name(ep.task.tool_mode)},
                 {"budget_steps", ep.task.budget_steps}};
    j["lookahead"] = ep.lookahead;
    j["steps"] = ep.steps;
    j["env_accesses"] = ep.env_accesses;
    j["dream_env_accesses"] = ep.dream_env_accesses;
    j["final_metric"] = {{"value", ep.final_metric.value}, {"success", ep.final_metric.success}};
    ordered_json records = ordered_json::array();
    for (const StepRecord& r : ep.records) {
        ordered_json jr;
        jr["turn"] = turn_to_json(r.turn);
        ordered_json dreams = ordered_json::array();
        for (const Turn& d : r.dreams) dreams.push_back(turn_to_json(d));
        jr["dreams"] = std::move(dreams);
        jr["action"] = action_words(r.action);
        jr["revised"] = r.revised;
        records.push_back(std::move(jr));
    }
    j["records"] = std::move(records);
    return j;
}

// ---------------------------------------------------------------------------
// Parallel episode evaluation (order-independent aggregation: results are
// keyed by seed index, so jobs > 1 is bit-identical to serial)
// ---------------------------------------------------------------------------

EmbodiedStats eval_embodied_jobs(const std::function<EpisodeRecord(int64_t)>& runner,
                                 int64_t seed_start, int count, int jobs) {
    if (jobs <= 1) return eval_embodied(runner, seed_start, count);
    std::vector<EpisodeRecord> eps(count);
    std::vector<std::future<void>> futs;
    std::atomic<int> next{0};
    for (int w = 0; w < jobs; ++w)
        futs.push_back(std::async(std::launch::async, [&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1))
                eps[i] = runner(seed_start + i);
        }));
    for (auto& f : futs) f.get();
    EmbodiedStats s;
    for (const EpisodeRecord& ep : eps) {
        s.values.push_back(ep.final_metric.value);
        s.successes.push_back(ep.final_metric.success);
        s.env_accesses += ep.env_accesses;
        s.dream_env_accesses += ep.dream_env_accesses;
    }
    finalize_stats(s);
    return s;
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

int cmd_data(const GlobalOpts& g, const std::string& stage, const std::string& out_dir,
             const std::string& ckpt_path, int context_override) {
    RunConfig cfg = effective_config(g);
    std::string hash = config_hash(cfg);
    Tokenizer tok = default_tokenizer();
    StageOptions opts = stage_options_of(cfg);
    fs::path dir(out_dir);

    auto need_ckpt = [&](const char* what) -> Params {
        if (ckpt_path.empty())
            throw UsageError(std::string(what) + " requires --ckpt (policy checkpoint)");
        return params_from_checkpoint(load_ckpt_checked(ckpt_path, tok.layout.vocab_size()));
    };

    if (stage == "pack") {
        int pack_len = context_override > 0 ? context_override : cfg.pack_len;
        if (pack_len > cfg.context_len)
            throw ConfigError("--context exceeds model.context_len");
        std::vector<std::string> found;
        auto stages = load_stages(dir, stage_names(), tok, &found);
        std::vector<Trajectory> all = assemble_training_set(stages, cfg.s3_repeat, cfg.s4_repeat);
        PackedDataset ds = pack_sequences(all, pack_len, tok);
        ordered_json rows = ordered_json::array();
        int64_t supervised = 0;
        for (const PackedRow& r : ds.rows) {
            ordered_json jr;
            jr["tokens"] = r.tokens;
            jr["pos"] = r.pos;
            jr["seg"] = r.seg;
            jr["weight"] = r.weight;
            jr["role"] = r.role;
            rows.push_back(std::move(jr));
            for (int8_t w : r.weight) supervised += w > 0 ? 1 : 0;
        }
        ordered_json j = report_header(hash, "");
        j["pack_len"] = pack_len;
        j["vocab_size"] = ds.vocab;
        j["stages"] = found;
        j["trajectories"] = all.size();
        j["rows"] = ds.rows.size();
        j["supervised_tokens"] = supervised;
        j["data"] = std::move(rows);
        write_json(dir / "packed.json", j);
        std::cout << "pack: " << all.size() << " trajectories -> " << ds.rows.size() << " rows of "
                  << pack_len << " (" << supervised << " supervised tokens)\n";
        return 0;
    }

    if (stage == "s0" || stage == "all") {
        S0Result r = s0_build(tok, opts);
        save_stage(dir, "s0", r.trajectories, opts, tok, hash);
        std::cout << "  camera clamp events: " << r.clamp_log.size() << "\n";
    }
    std::vector<Trajectory> s1;
    if (stage == "s1" || stage == "s2" || stage == "all") {
        if (stage == "s2" && fs::exists(stage_file(dir, "s1"))) {
            s1 = load_stage(dir, "s1", tok);
        } else {
            s1 = s1_build(tok, opts);
            if (stage != "s2") save_stage(dir, "s1", s1, opts, tok, hash);
        }
    }
    if (stage == "s2" || stage == "all") {
        std::vector<Trajectory> s2 = s2_build(s1, tok, opts);
        save_stage(dir, "s2", s2, opts, tok, hash);
    }
    if (stage == "s3" || (stage == "all" && !ckpt_path.empty())) {
        Params policy = need_ckpt("s3");
        S3Result r = s3_build(policy, tok, opts);
        save_stage(dir, "s3", r.trajectories, opts, tok, hash);
        std::cout << "  divergence attempts: " << r.attempts << "\n";
    }
    if (stage == "s4" || (stage == "all" && !ckpt_path.empty())) {
        Params policy = need_ckpt("s4");
        std::vector<Trajectory> s4 = s4_build(policy, tok, opts);
        save_stage(dir, "s4", s4, opts, tok, hash);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, const std::string& data_dir, const std::string& out_dir,
              const std::string& mode, const std::string& init_from, const std::string& resume) {
    RunConfig cfg = effective_config(g);
    std::string hash = config_hash(cfg);
    Tokenizer tok = default_tokenizer();
    const int vocab = tok.layout.vocab_size();

    std::vector<std::string> want;
    if (mode == "basic")
        want = {"s0", "s1", "s2"};
    else if (mode == "lookahead")
        want = {"s0", "s1", "s2", "s3", "s4"};
    else
        throw UsageError("--mode must be basic or lookahead");

    std::vector<std::string> found;
    auto stages = load_stages(data_dir, want, tok, &found);
    if (mode == "lookahead") {
        bool any_rft = false;
        for (const std::string& s : found) any_rft |= (s == "s3" || s == "s4");
        if (!any_rft)
            throw DataError("lookahead training needs s3.jsonl or s4.jsonl under " + data_dir);
        if (init_from.empty() && resume.empty())
            throw UsageError("lookahead training continues from a basic checkpoint: pass --init-from");
    }
    std::vector<Trajectory> all = assemble_training_set(stages, cfg.s3_repeat, cfg.s4_repeat);
    PackedDataset ds = pack_sequences(all, cfg.pack_len, tok);

    ModelConfig mc = model_config_of(cfg, vocab);
    Params params(mc);
    AdamState adam(params.size());
    if (!resume.empty()) {
        Checkpoint ck = load_ckpt_checked(resume, vocab);
        if (!ck.has_opt) throw DataError("resume checkpoint has no optimizer state: " + resume);
        params = params_from_checkpoint(ck);
        adam.t = ck.opt_t;
        adam.m = ck.m;
        adam.v = ck.v;
    } else if (!init_from.empty()) {
        Checkpoint ck = load_ckpt_checked(init_from, vocab);
        params = params_from_checkpoint(ck);  // warm start, fresh optimizer
    } else {
        params.init_gaussian();
    }

    TrainOptions topt = train_options_of(cfg);
    TrainHooks hooks;
    hooks.on_log = [](const TrainLogEntry& e) {
        std::cout << "step " << e.step << "  loss " << e.loss << "  |g| " << e.grad_norm << "  lr "
                  << e.lr << "  masked " << e.masked_token_count << "\n";
    };
    hooks.on_eval = [](int64_t step, double acc) {
        std::cout << "step " << step << "  action-accuracy " << acc << "\n";
    };
    TrainResult res = train_loop(params, adam, ds, topt, hooks);

    fs::create_directories(out_dir);
    fs::path ckpt = fs::path(out_dir) / "model.ckpt";
    save_checkpoint(ckpt, params, &adam, hash);
    write_train_log(fs::path(out_dir) / "train_log.jsonl", res.log);

    ordered_json man = report_header(hash, params_checksum(params));
    man["mode"] = mode;
    man["stages"] = found;
    man["trajectories"] = all.size();
    man["rows"] = ds.rows.size();
    man["steps_run"] = res.steps_run;
    man["optimizer_step"] = adam.t;
    man["final_loss"] = res.final_loss;
    man["final_action_accuracy"] = res.final_action_accuracy;
    man["early_stopped"] = res.early_stopped;
    man["config"] = canonical_config(cfg);
    write_json(fs::path(out_dir) / "train_manifest.json", man);

    std::cout << "trained " << res.steps_run << " steps (optimizer step " << adam.t << "), loss "
              << res.final_loss << ", action accuracy " << res.final_action_accuracy << "\n"
              << "checkpoint -> " << ckpt.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

int cmd_rollout(const GlobalOpts& g, const std::string& ckpt_path, const std::string& task_name,
                const std::string& mode, int n, int budget, const std::string& seed_str,
                const std::string& out_path) {
    RunConfig cfg = effective_config(g);
    if (!task_name.empty()) cfg.task = task_name;
    if (budget > 0) cfg.budget_steps = budget;
    validate_config(cfg);
    std::string hash = config_hash(cfg);

    Tokenizer tok = default_tokenizer();
    Checkpoint ck = load_ckpt_checked(ckpt_path, tok.layout.vocab_size());
    Params params = params_from_checkpoint(ck);

    int lookahead = 0;
    if (mode == "lookahead") {
        lookahead = n > 0 ? n : (cfg.lookahead > 0 ? cfg.lookahead : 1);
    } else if (mode == "basic") {
        if (n > 0) throw UsageError("--n applies to lookahead mode only");
    } else {
        throw UsageError("--mode must be basic or lookahead");
    }

    uint64_t world_seed = cfg.seed;
    if (!seed_str.empty()) world_seed = parse_seed(seed_str);
    if (const char* env = std::getenv("RIG_SEED")) world_seed = parse_seed(env);

    TaskSpec task = task_spec_of(cfg);
    AgentOptions opts = agent_options_of(cfg);
    EpisodeRecord ep = run_policy_episode(params, tok, task, cfg.world_size,
                                          static_cast<int64_t>(world_seed), lookahead, opts);

    ordered_json j = episode_to_json(ep, hash, params_checksum(params));
    write_json(out_path, j);
    std::cout << "episode: task " << task_kind_name(task.kind) << ", seed " << world_seed << ", steps "
              << ep.steps << ", metric " << ep.final_metric.value
              << (ep.final_metric.success ? " (success)" : " (no success)") << "\n"
              << "env accesses " << ep.env_accesses << ", dream env accesses "
              << ep.dream_env_accesses << " -> " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const GlobalOpts& g, const std::string& ckpt_path, const std::string& suite, int seeds,
             const std::string& data_dir, const std::string& out_path) {
    RunConfig cfg = effective_config(g);
    std::string hash = config_hash(cfg);
    Tokenizer tok = default_tokenizer();
    Checkpoint ck = load_ckpt_checked(ckpt_path, tok.layout.vocab_size());
    Params params = params_from_checkpoint(ck);
    if (seeds <= 0) seeds = cfg.eval_episodes;

    TaskSpec task = task_spec_of(cfg);
    ordered_json j = report_header(hash, params_checksum(params));
    j["suite"] = suite;
    j["task"] = {{"kind", task_kind_name(task.kind)}, {"tool_mode", tool_mode_name(task.tool_mode)}};
    j["mode_flags"] = {{"action", cfg.use_action},
                      {"generation", cfg.use_frame},
                      {"reasoning", cfg.use_reason},
                      {"lookahead", cfg.lookahead}};
    j["seed_start"] = cfg.eval_seed_start;
    j["seeds"] = seeds;

    if (suite == "embodied") {
        if (seeds < 20) throw ConfigError("embodied means need >= 20 seeds");
        AgentOptions base = agent_options_of(cfg);
        base.max_steps = cfg.eval_max_steps;
        EmbodiedStats s = eval_embodied_jobs(
            [&](int64_t seed) {
                return run_policy_episode(params, tok, task, cfg.world_size, seed, cfg.lookahead, base);
            },
            cfg.eval_seed_start, seeds, g.jobs);
        j["stats"] = stats_json(s);
        std::cout << "embodied " << task_kind_name(task.kind) << ": mean " << s.mean << " +- " << s.stdev
                  << " (n=" << s.n << "), success rate " << s.success_rate << "\n";
    } else if (suite == "generation") {
        StageOptions opts = stage_options_of(cfg);
        opts.seed_start = cfg.eval_seed_start;
        opts.s1_count = seeds;
        opts.s2_count = seeds;
        std::vector<Trajectory> heldout = s2_build(s1_build(tok, opts), tok, opts);
        std::set<int64_t> train_ids;
        if (!data_dir.empty())
            for (const auto& stage : load_stages(data_dir, stage_names(), tok))
                for (const Trajectory& tr : stage) train_ids.insert(tr.id);
        GenerationEval ev = eval_generation(params, tok, heldout, train_ids, cfg.pack_len);
        j["note"] = "FID replaced by token accuracy + PSNR (self-contained build)";
        j["token_accuracy"] = ev.token_accuracy;
        j["reason_accuracy"] = ev.reason_accuracy;
        j["action_accuracy"] = ev.action_accuracy;
        j["frame_token_accuracy"] = ev.frame_token_accuracy;
        j["mean_psnr"] = ev.mean_psnr;
        j["frames"] = ev.frames;
        j["positions"] = ev.positions;
        std::cout << "generation: token accuracy " << ev.token_accuracy << ", frame-token accuracy "
                  << ev.frame_token_accuracy << ", mean PSNR " << ev.mean_psnr << " dB over "
                  << ev.frames << " frames\n";
    } else if (suite == "reasoning") {
        ReasoningEval ev = eval_reasoning(params, tok, task, cfg.world_size, cfg.eval_seed_start, seeds,
                                          cfg.eval_max_steps, stage_options_of(cfg).limits);
        j["note"] = "judge-scored reasoning replaced by template-inversion consistency";
        j["turns"] = ev.turns;
        j["consistency"] = ev.consistency;
        j["well_formed_rate"] = ev.well_formed_rate;
        std::cout << "reasoning: consistency " << ev.consistency << ", well-formed "
                  << ev.well_formed_rate << " over " << ev.turns << " turns\n";
    } else {
        throw UsageError("--suite must be embodied, generation, or reasoning");
    }
    write_json(out_path, j);
    std::cout << "report -> " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    AblationFlags flags;
    bool rft_data = false;   // include S3/S4 (warm-started from the previous row)
    int lookahead = 0;
};

int cmd_ablate(const GlobalOpts& g, const std::string& data_dir, const std::string& out_dir) {
    RunConfig cfg = effective_config(g);
    std::string hash = config_hash(cfg);
    Tokenizer tok = default_tokenizer();
    const int vocab = tok.layout.vocab_size();
    fs::create_directories(out_dir);

    std::vector<std::string> found;
    auto base_stages = load_stages(data_dir, {"s0", "s1", "s2"}, tok, &found);
    std::vector<Trajectory> base_set = assemble_training_set(base_stages);
    PackedDataset base_ds = pack_sequences(base_set, cfg.pack_len, tok);

    const std::vector<AblationRow> rows = {
        {"action", {false, true, false}, false, 0},
        {"action+gen", {false, true, true}, false, 0},
        {"action+gen+reason", {true, true, true}, false, 0},
        {"rig-basic+s3s4", {true, true, true}, true, 0},
        {"rig-lookahead-n3", {true, true, true}, true, 3},
    };
    const std::vector<std::string> tasks = {"collect_wood", "collect_grass", "collect_dirt",
                                            "dig",          "explore",       "tower"};

    TrainOptions topt = train_options_of(cfg);
    auto train_fresh = [&](const PackedDataset& ds, AblationFlags flags, Params* warm) {
        Params params(model_config_of(cfg, vocab));
        if (warm)
            params = *warm;
        else
            params.init_gaussian();
        AdamState adam(params.size());
        TrainOptions t = topt;
        t.flags = flags;
        train_loop(params, adam, ds, t);
        return params;
    };

    // Rows 1-3 train from scratch on S0-S2; row 4 continues row 3 on +S3/S4
    // (generated with the row-3 policy when absent); row 5 reuses row 4 and
    // changes inference only.
    std::vector<Params> models;
    std::cout << "training row 1/" << rows.size() << " (" << rows[0].name << ")\n";
    models.push_back(train_fresh(base_ds, rows[0].flags, nullptr));
    std::cout << "training row 2/" << rows.size() << " (" << rows[1].name << ")\n";
    models.push_back(train_fresh(base_ds, rows[1].flags, nullptr));
    std::cout << "training row 3/" << rows.size() << " (" << rows[2].name << ")\n";
    models.push_back(train_fresh(base_ds, rows[2].flags, nullptr));

    StageOptions sopts = stage_options_of(cfg);
    std::vector<Trajectory> s3, s4;
    if (fs::exists(stage_file(data_dir, "s3"))) {
        s3 = load_stage(data_dir, "s3", tok);
    } else {
        s3 = s3_build(models[2], tok, sopts).trajectories;
        save_stage(out_dir, "s3", s3, sopts, tok, hash);
    }
    if (fs::exists(stage_file(data_dir, "s4"))) {
        s4 = load_stage(data_dir, "s4", tok);
    } else {
        s4 = s4_build(models[2], tok, sopts);
        save_stage(out_dir, "s4", s4, sopts, tok, hash);
    }
    auto full_stages = base_stages;
    full_stages.push_back(s3);
    full_stages.push_back(s4);
    PackedDataset full_ds =
        pack_sequences(assemble_training_set(full_stages, cfg.s3_repeat, cfg.s4_repeat), cfg.pack_len, tok);
    std::cout << "training row 4/" << rows.size() << " (" << rows[3].name << ")\n";
    models.push_back(train_fresh(full_ds, rows[3].flags, &models[2]));
    models.push_back(models[3]);  // row 5: same weights, lookahead inference

    AgentOptions base_opts = agent_options_of(cfg);
    base_opts.max_steps = cfg.eval_max_steps;
    ToolMode tm = tool_mode_from_name(cfg.tool_mode);
    ordered_json j = report_header(hash, "");
    j["tool_mode"] = cfg.tool_mode;
    j["seed_start"] = cfg.eval_seed_start;
    j["seeds"] = cfg.eval_episodes;
    ordered_json jrows = ordered_json::array();

    std::vector<std::vector<EmbodiedStats>> table(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
        std::cout << "evaluating row " << r + 1 << "/" << rows.size() << " (" << rows[r].name << ")\n";
        ordered_json jr;
        jr["name"] = rows[r].name;
        jr["flags"] = {{"reason", rows[r].flags.use_reason},
                       {"action", rows[r].flags.use_action},
                       {"frame", rows[r].flags.use_frame}};
        jr["rft_data"] = rows[r].rft_data;
        jr["lookahead"] = rows[r].lookahead;
        jr["checkpoint_checksum"] = params_checksum(models[r]);
        ordered_json jtasks;
        for (const std::string& tname : tasks) {
            TaskSpec task{task_kind_from_name(tname), cfg.budget_steps, tm};
            EmbodiedStats s = eval_embodied_jobs(
                [&](int64_t seed) {
                    return run_policy_episode(models[r], tok, task, cfg.world_size, seed,
                                              rows[r].lookahead, base_opts);
                },
                cfg.eval_seed_start, cfg.eval_episodes, g.jobs);
            table[r].push_back(s);
            jtasks[tname] = stats_json(s);
        }
        jr["tasks"] = std::move(jtasks);
        jrows.push_back(std::move(jr));
    }
    for (size_t r = 0; r < rows.size(); ++r) {
        ordered_json deltas;
        for (size_t t = 0; t < tasks.size(); ++t) deltas[tasks[t]] = table[r][t].mean - table[0][t].mean;
        jrows[r]["delta_vs_action_only"] = std::move(deltas);
    }
    j["rows"] = std::move(jrows);
    write_json(fs::path(out_dir) / "ablation_report.json", j);

    std::cout << "\nablation (mean over " << cfg.eval_episodes << " seeds, " << cfg.tool_mode << ")\n";
    std::cout << "row";
    for (const std::string& t : tasks) std::cout << "\t" << t;
    std::cout << "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        std::cout << rows[r].name;
        char buf[64];
        for (size_t t = 0; t < tasks.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "\t%.2f%+.2f", table[r][t].mean,
                          table[r][t].mean - table[0][t].mean);
            std::cout << buf;
        }
        std::cout << "\n";
    }
    std::cout << "report -> " << (fs::path(out_dir) / "ablation_report.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<double> parse_grid(const std::string& grid) {
    std::vector<double> out;
    std::stringstream ss(grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t pos = 0;
            double v = std::stod(item, &pos);
            if (pos != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("invalid grid entry: " + item);
        }
    }
    if (out.empty()) throw UsageError("--grid must be a non-empty comma-separated list");
    return out;
}

void print_sweep_table(const std::string& axis, const std::vector<SweepPoint>& points) {
    std::cout << "\n" << axis << "\tmean\tstd\tsuccess\n";
    char buf[96];
    for (const SweepPoint& p : points) {
        std::snprintf(buf, sizeof(buf), "%g\t%.3f\t%.3f\t%.2f\n", p.x, p.stats.mean, p.stats.stdev,
                      p.stats.success_rate);
        std::cout << buf;
    }
}

int cmd_sweep(const GlobalOpts& g, const std::string& axis, const std::string& grid_str,
              const std::string& ckpt_path, const std::string& data_dir, const std::string& out_path) {
    RunConfig cfg = effective_config(g);
    std::string hash = config_hash(cfg);
    Tokenizer tok = default_tokenizer();
    const int vocab = tok.layout.vocab_size();
    std::vector<double> grid = parse_grid(grid_str);
    TaskSpec task = task_spec_of(cfg);
    AgentOptions base = agent_options_of(cfg);
    base.max_steps = cfg.eval_max_steps;

    auto eval_model = [&](const Params& params, int lookahead) {
        return eval_embodied_jobs(
            [&](int64_t seed) {
                return run_policy_episode(params, tok, task, cfg.world_size, seed, lookahead, base);
            },
            cfg.eval_seed_start, cfg.eval_episodes, g.jobs);
    };

    std::vector<SweepPoint> points;
    std::string ckpt_checksum;
    if (axis == "lookahead") {
        if (ckpt_path.empty()) throw UsageError("sweep --axis lookahead requires --ckpt");
        Params params = params_from_checkpoint(load_ckpt_checked(ckpt_path, vocab));
        ckpt_checksum = params_checksum(params);
        std::vector<int> depths;
        for (double v : grid) {
            int n = static_cast<int>(v);
            if (v != n || n < 0 || n > 5) throw ConfigError("lookahead grid entries must be in {0..5}");
            depths.push_back(n);
        }
        for (int n : depths) {
            std::cout << "sweep point n=" << n << "\n";
            points.push_back({static_cast<double>(n), eval_model(params, n)});
        }
    } else if (axis == "data_ratio" || axis == "iterations") {
        if (data_dir.empty()) throw UsageError("sweep --axis " + axis + " requires --data");
        auto stages = load_stages(data_dir, stage_names(), tok);
        std::vector<Trajectory> all = assemble_training_set(stages, cfg.s3_repeat, cfg.s4_repeat);
        TrainOptions topt = train_options_of(cfg);
        topt.target_action_accuracy = -1.0;  // grid points differ only along the axis
        if (axis == "data_ratio") {
            for (double r : grid)
                if (r != 0.1 && r != 0.2 && r != 0.5 && r != 1.0)
                    throw ConfigError("data_ratio grid entries must be in {0.1, 0.2, 0.5, 1.0}");
            for (double r : grid) {
                size_t take = static_cast<size_t>(std::ceil(r * static_cast<double>(all.size())));
                take = std::min(std::max<size_t>(take, 1), all.size());
                std::vector<Trajectory> subset(all.begin(), all.begin() + take);
                std::cout << "sweep point ratio=" << r << " (" << take << " trajectories)\n";
                PackedDataset ds = pack_sequences(subset, cfg.pack_len, tok);
                Params params(model_config_of(cfg, vocab));
                params.init_gaussian();
                AdamState adam(params.size());
                train_loop(params, adam, ds, topt);
                points.push_back({r, eval_model(params, cfg.lookahead)});
            }
        } else {
            std::vector<int> steps;
            for (double v : grid) {
                int s = static_cast<int>(v);
                if (v != s || s <= 0) throw ConfigError("iterations grid entries must be positive integers");
                steps.push_back(s);
            }
            if (!std::is_sorted(steps.begin(), steps.end()))
                throw ConfigError("iterations grid must be ascending");
            PackedDataset ds = pack_sequences(all, cfg.pack_len, tok);
            Params params(model_config_of(cfg, vocab));
            params.init_gaussian();
            AdamState adam(params.size());
            for (int s : steps) {
                std::cout << "sweep point steps=" << s << "\n";
                TrainOptions t = topt;
                t.opt.total_steps = s;  // continue the same run up to s
                train_loop(params, adam, ds, t);
                points.push_back({static_cast<double>(s), eval_model(params, cfg.lookahead)});
            }
        }
    } else {
        throw UsageError("--axis must be lookahead, data_ratio, or iterations");
    }

    ordered_json j = report_header(hash, ckpt_checksum);
    j["axis"] = axis;
    j["task"] = task_kind_name(task.kind);
    j["seed_start"] = cfg.eval_seed_start;
    j["seeds"] = cfg.eval_episodes;
    ordered_json jp = ordered_json::array();
    for (const SweepPoint& p : points) {
        ordered_json e;
        e["x"] = p.x;
        e["stats"] = stats_json(p.stats);
        jp.push_back(std::move(e));
    }
    j["points"] = std::move(jp);
    write_json(out_path, j);
    print_sweep_table(axis, points);
    std::cout << "report -> " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

bool looks_like_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    char magic[4] = {};
    f.read(magic, 4);
    return f.gcount() == 4 && std::string(magic, 4) == "RIGF";
}

int inspect_checkpoint(const fs::path& path, const std::string& config_path) {
    Checkpoint ck = load_checkpoint(path);
    std::cout << "checkpoint " << path.string() << "\n"
              << "  tool_version    " << ck.tool_version << "\n"
              << "  config_hash     " << (ck.config_hash.empty() ? "(none)" : ck.config_hash) << "\n"
              << "  model           " << ck.cfg.n_layers << "L/" << ck.cfg.n_heads << "H d" << ck.cfg.d_model
              << " ff" << ck.cfg.d_ff << " ctx" << ck.cfg.context_len << " vocab " << ck.cfg.vocab << "\n"
              << "  parameters      " << ck.params.size() << "\n"
              << "  params_checksum "
              << hex64(fnv1a64_bytes(ck.params.data(), ck.params.size() * sizeof(double))) << "\n"
              << "  optimizer       " << (ck.has_opt ? "step " + std::to_string(ck.opt_t) : "(none)")
              << "\n";
    if (ck.tool_version != kToolVersion)
        std::cout << "  note: written by " << ck.tool_version << ", this tool is " << kToolVersion << "\n";
    if (!config_path.empty()) {
        GlobalOpts g;
        g.config_path = config_path;
        std::string want = config_hash(effective_config(g));
        if (ck.config_hash != want)
            throw DataError("config hash mismatch: checkpoint " + ck.config_hash + " vs config " + want);
        std::cout << "  linkage OK: matches " << config_path << "\n";
    }
    return 0;
}

void print_turn_words(const Tokenizer& tok, const Turn& t, const std::string& indent) {
    auto joined = [&](const std::vector<int32_t>& ids) {
        std::string s;
        for (const std::string& w : tok.words(ids)) s += (s.empty() ? "" : " ") + w;
        return s;
    };
    std::cout << indent << (t.imagined ? "[imagined] " : "") << "task: " << joined(t.task_tokens)
              << "\n"
              << indent << "reasoning: " << joined(t.reasoning_tokens) << "\n"
              << indent << "action: " << joined(t.action_tokens) << "\n";
}

int inspect_json(const fs::path& path, const std::string& config_path) {
    Tokenizer tok = default_tokenizer();
    auto check_linkage = [&](const ordered_json& j) {
        if (j.contains("tool_version"))
            std::cout << "  tool_version " << j["tool_version"].get<std::string>() << "\n";
        if (j.contains("config_hash")) {
            std::cout << "  config_hash  " << j["config_hash"].get<std::string>() << "\n";
            if (!config_path.empty()) {
                GlobalOpts g;
                g.config_path = config_path;
                std::string want = config_hash(effective_config(g));
                if (j["config_hash"].get<std::string>() != want)
                    throw DataError("config hash mismatch: artifact " +
                                    j["config_hash"].get<std::string>() + " vs config " + want);
                std::cout << "  linkage OK: matches " << config_path << "\n";
            }
        }
    };

    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ordered_json whole = ordered_json::parse(text, nullptr, false);
    ordered_json first;
    if (whole.is_discarded()) {  // not a single document; try JSONL via its first line
        std::string first_line = text.substr(0, text.find('\n'));
        first = ordered_json::parse(first_line, nullptr, false);
        if (first.is_discarded())
            throw DataError("not a rig artifact (invalid JSON): " + path.string());
    } else {
        first = whole;
    }

    if (first.contains("turns") && first.contains("id")) {  // trajectory JSONL
        std::vector<Trajectory> trajs = load_trajectories_jsonl(path, tok);
        std::map<std::string, int> by_stage;
        std::map<std::string, int> by_task;
        size_t turns = 0, tokens = 0;
        for (const Trajectory& tr : trajs) {
            by_stage[tr.source_stage] += 1;
            by_task[task_kind_name(tr.task.kind)] += 1;
            turns += tr.turns.size();
            for (const Turn& t : tr.turns) tokens += t.token_len();
        }
        std::cout << "trajectories " << path.string() << "\n  count " << trajs.size() << ", turns "
                  << turns << ", tokens " << tokens << "\n  stages:";
        for (auto& [s, n] : by_stage) std::cout << " " << s << "=" << n;
        std::cout << "\n  tasks:";
        for (auto& [t, n] : by_task) std::cout << " " << t << "=" << n;
        std::cout << "\n  first trajectory (" << trajs[0].name << "):\n";
        for (size_t i = 0; i < std::min<size_t>(trajs[0].turns.size(), 3); ++i)
            print_turn_words(tok, trajs[0].turns[i], "    ");
        return 0;
    }

    const ordered_json& j = first;
    if (j.contains("records")) {  // episode
        std::cout << "episode " << path.string() << "\n";
        check_linkage(j);
        std::cout << "  task " << j["task"]["kind"].get<std::string>() << ", world seed "
                  << j["world_seed"] << ", lookahead " << j["lookahead"] << "\n  steps " << j["steps"]
                  << ", metric " << j["final_metric"]["value"] << " success "
                  << j["final_metric"]["success"] << "\n  env accesses " << j["env_accesses"]
                  << ", dream env accesses " << j["dream_env_accesses"] << "\n";
        int revised = 0;
        for (const auto& r : j["records"])
            if (r.value("revised", false)) revised += 1;
        std::cout << "  revised steps " << revised << "/" << j["records"].size() << "\n";
        size_t show = std::min<size_t>(j["records"].size(), 3);
        for (size_t i = 0; i < show; ++i) {
            std::cout << "  step " << i << ":\n";
            print_turn_words(tok, turn_from_json(j["records"][i]["turn"]), "    ");
        }
        return 0;
    }
    if (j.contains("stage")) {  // stage manifest
        std::cout << "stage manifest " << path.string() << "\n";
        check_linkage(j);
        std::cout << "  stage " << j["stage"].get<std::string>() << ", count " << j["count"]
                  << ", vocab " << j["vocab_size"] << ", world size " << j["world_size"] << "\n";
        return 0;
    }
    if (j.contains("data") && j.contains("pack_len")) {  // packed dataset
        std::cout << "packed dataset " << path.string() << "\n";
        check_linkage(j);
        std::cout << "  pack_len " << j["pack_len"] << ", rows " << j["rows"] << ", trajectories "
                  << j["trajectories"] << ", supervised tokens " << j["supervised_tokens"] << "\n";
        return 0;
    }
    if (j.contains("points") || j.contains("rows") || j.contains("suite")) {  // report
        std::cout << "report " << path.string() << "\n";
        check_linkage(j);
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    throw DataError("unrecognized artifact schema: " + path.string());
}

int cmd_inspect(const std::string& path, const std::string& config_path) {
    fs::path p(path);
    if (!fs::exists(p)) throw DataError("no such file: " + path);
    if (looks_like_checkpoint(p)) return inspect_checkpoint(p, config_path);
    return inspect_json(p, config_path);
}

}  // namespace

// ---------------------------------------------------------------------------
// main
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"gridworld agent with reasoning, frame prediction, and dream-rollout lookahead"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "configuration file (INI)")->configurable(false);
    app.add_option("--seed", g.seed_flag, "root seed (overrides config; RIG_SEED overrides both)");
    app.add_option("--jobs", g.jobs, "parallel episode workers (default 1 = serial)")
        ->check(CLI::PositiveNumber);

    // data
    auto* data = app.add_subcommand("data", "build dataset stages (s0..s4) or pack them");
    data->fallthrough();
    std::string data_stage, data_out = "data", data_ckpt;
    int data_context = 0;
    data->add_option("stage", data_stage, "s0|s1|s2|s3|s4|all|pack")
        ->required()
        ->check(CLI::IsMember({"s0", "s1", "s2", "s3", "s4", "all", "pack"}));
    data->add_option("--out", data_out, "dataset directory");
    data->add_option("--ckpt", data_ckpt, "policy checkpoint (required for s3/s4)");
    data->add_option("--context", data_context, "pack length override (pack only)");

    // train
    auto* train = app.add_subcommand("train", "train a model on packed stage data");
    train->fallthrough();
    std::string train_data = "data", train_out = "run", train_mode = "basic", train_init, train_resume;
    train->add_option("--data", train_data, "dataset directory");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--mode", train_mode, "basic (S0-S2) or lookahead (+S3/S4)");
    train->add_option("--init-from", train_init, "warm-start weights from a checkpoint");
    train->add_option("--resume", train_resume, "resume weights + optimizer from a checkpoint");

    // rollout
    auto* roll = app.add_subcommand("rollout", "run one episode and write it as JSON");
    roll->fallthrough();
    std::string roll_ckpt, roll_task, roll_mode = "basic", roll_seed, roll_out = "episode.json";
    int roll_n = 0, roll_budget = 0;
    roll->add_option("--ckpt", roll_ckpt, "model checkpoint")->required();
    roll->add_option("--task", roll_task, "task kind (default from config)");
    roll->add_option("--mode", roll_mode, "basic or lookahead");
    roll->add_option("--n", roll_n, "dreamed turns per step (lookahead)");
    roll->add_option("--budget", roll_budget, "environment step budget");
    roll->add_option("--seed", roll_seed, "world seed (default: root seed)");
    roll->add_option("--out", roll_out, "episode output file");

    // eval
    auto* eval = app.add_subcommand("eval", "run an evaluation suite and write a report");
    eval->fallthrough();
    std::string eval_ckpt, eval_suite, eval_data, eval_out = "report.json";
    int eval_seeds = 0;
    eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
    eval->add_option("--suite", eval_suite, "embodied|generation|reasoning")->required();
    eval->add_option("--seeds", eval_seeds, "number of evaluation seeds (default from config)");
    eval->add_option("--data", eval_data, "training dataset directory (disjointness check)");
    eval->add_option("--out", eval_out, "report output file");

    // ablate
    auto* abl = app.add_subcommand("ablate", "train and evaluate the 5-row capability matrix");
    abl->fallthrough();
    std::string abl_data = "data", abl_out = "ablation";
    abl->add_option("--data", abl_data, "dataset directory (s0/s1/s2 required)");
    abl->add_option("--out", abl_out, "output directory");

    // sweep
    auto* swp = app.add_subcommand("sweep", "scalability sweep along one axis");
    swp->fallthrough();
    std::string swp_axis, swp_grid, swp_ckpt, swp_data, swp_out = "sweep.json";
    swp->add_option("--axis", swp_axis, "lookahead|data_ratio|iterations")->required();
    swp->add_option("--grid", swp_grid, "comma-separated grid values")->required();
    swp->add_option("--ckpt", swp_ckpt, "model checkpoint (lookahead axis)");
    swp->add_option("--data", swp_data, "dataset directory (training axes)");
    swp->add_option("--out", swp_out, "report output file");

    // inspect
    auto* ins = app.add_subcommand("inspect", "pretty-print an artifact and verify linkage");
    ins->fallthrough();
    std::string ins_file;
    ins->add_option("file", ins_file, "trajectory/episode/checkpoint/report/manifest file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems exit 1; --help/--version exit 0
    }

    try {
        if (*data) return cmd_data(g, data_stage, data_out, data_ckpt, data_context);
        if (*train) return cmd_train(g, train_data, train_out, train_mode, train_init, train_resume);
        if (*roll)
            return cmd_rollout(g, roll_ckpt, roll_task, roll_mode, roll_n, roll_budget, roll_seed,
                               roll_out);
        if (*eval) return cmd_eval(g, eval_ckpt, eval_suite, eval_seeds, eval_data, eval_out);
        if (*abl) return cmd_ablate(g, abl_data, abl_out);
        if (*swp) return cmd_sweep(g, swp_axis, swp_grid, swp_ckpt, swp_data, swp_out);
        if (*ins) return cmd_inspect(ins_file, g.config_path);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
