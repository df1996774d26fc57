#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rig/agent.hpp"
#include "rig/minegrid.hpp"
#include "rig/oracles.hpp"
#include "rig/tokenizer.hpp"
#include "rig/trajectory.hpp"
#include "rig/version.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct StageOptions {
    int world_size = 16;
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
    // Per-task step caps during data collection (tasks keep their own
    // success criteria; these only bound rollout length).
    int collect_budget = 32;
    int tower_budget = 64;
    int explore_budget = 150;
    // Raw-camera jitter injected when synthesizing unquantized source logs.
    double s0_pitch_noise = 2.0;
    double s0_yaw_noise = 2.0;
    int s0_spike_every = 17;
    SampleLimits limits;
};

inline int data_budget(const StageOptions& o, TaskKind k) {
    switch (k) {
        case TaskKind::Tower: return o.tower_budget;
        case TaskKind::Explore: return o.explore_budget;
        default: return o.collect_budget;
    }
}

// Task mix for expert-data stages.  Collection tasks dominate (they are the
// embodied-eval workload); Tower and Explore appear sparsely because their
// episodes are an order of magnitude longer.
inline const std::vector<std::pair<TaskKind, int>>& stage_task_cycle() {
    static const std::vector<std::pair<TaskKind, int>> kCycle = [] {
        std::vector<std::pair<TaskKind, int>> c;
        auto rep = [&](TaskKind k, int n) { for (int i = 0; i < n; ++i) c.push_back({k, 0}); };
        rep(TaskKind::CollectWood, 10);
        rep(TaskKind::CollectGrass, 5);
        rep(TaskKind::CollectDirt, 3);
        rep(TaskKind::Dig, 3);
        rep(TaskKind::Tower, 2);
        rep(TaskKind::Explore, 1);
        return c;
    }();
    return kCycle;
}

// ---------------------------------------------------------------------------
// Expert rollout capture
// ---------------------------------------------------------------------------

struct ExpertRun {
    std::vector<Frame> frames;           // length = actions + 1
    std::vector<ActionCommand> actions;
    MetricValue metric;
    bool success = false;
};

// Rolls the scripted expert until success, exhaustion, or the step cap.  The
// optional mutator lets callers perturb each command before execution (used to
// synthesize raw camera logs); frames always reflect what actually ran.
inline ExpertRun run_expert_capture(WorldState st, const TaskSpec& spec, int max_steps,
                                    const std::function<ActionCommand(const ActionCommand&)>& mutate = {}) {
    ExpertRun run;
    run.frames.push_back(render(st));
    for (int i = 0; i < max_steps; ++i) {
        ExpertDecision d = Expert::decide(st, spec);
        if (d.exhausted) break;
        ActionCommand act = mutate ? mutate(d.action) : d.action;
        step(st, act);
        run.actions.push_back(act);
        run.frames.push_back(render(st));
        MetricValue m = task_metric(st, spec);
        if (m.success) break;
    }
    run.metric = task_metric(st, spec);
    run.success = run.metric.success;
    return run;
}

// States visited while replaying `actions` from the generated world; the
// result has actions.size()+1 entries (state before each action + final).
inline std::vector<WorldState> replay_states(int64_t world_seed, int world_size, const TaskSpec& spec,
                                             const std::vector<ActionCommand>& actions) {
    std::vector<WorldState> states;
    WorldState st = world_gen(world_seed, world_size, spec);
    states.push_back(st);
    for (const ActionCommand& a : actions) {
        step(st, a);
        states.push_back(st);
    }
    return states;
}

inline std::vector<ActionCommand> trajectory_actions(const Trajectory& tr, const Tokenizer& tok) {
    std::vector<ActionCommand> out;
    for (const Turn& t : tr.turns) out.push_back(action_from_words(tok.words(t.action_tokens)));
    return out;
}

namespace pipeline_detail {

inline std::vector<int32_t> obs_ids(const Tokenizer& tok, const Frame& f) {
    return delimited_frame(tok.encode_frame(f));
}

// Builds the action/frame skeleton of a turn sequence from an expert run.
inline std::vector<Turn> turns_from_run(const Tokenizer& tok, const TaskSpec& spec, const ExpertRun& run) {
    std::vector<Turn> turns;
    std::vector<int32_t> task_ids = task_token_ids(tok, spec);
    for (size_t i = 0; i < run.actions.size(); ++i) {
        Turn t;
        t.obs_tokens = obs_ids(tok, run.frames[i]);
        t.task_tokens = task_ids;
        t.prev_action_tokens =
            i == 0 ? tok.word_ids({"none"}) : tok.word_ids(action_words(run.actions[i - 1]));
        t.action_tokens = tok.word_ids(action_words(run.actions[i]));
        t.pred_frame_tokens = obs_ids(tok, run.frames[i + 1]);
        t.w_reason = 0;  // no rationale yet
        t.w_action = 1;
        t.w_frame = 1;
        turns.push_back(std::move(t));
    }
    return turns;
}

inline TaskSpec make_spec(TaskKind kind, ToolMode tool, int budget) {
    TaskSpec spec;
    spec.kind = kind;
    spec.tool_mode = tool;
    spec.budget_steps = budget;
    return spec;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stage 0: raw-log quantization
// ---------------------------------------------------------------------------

struct CameraQuant {
    int value = 0;        // multiple of 5 in [-45, 45]
    bool clamped = false;
    double raw = 0.0;
};

// Rounds a raw camera delta (degrees) to the nearest multiple of 5, half away
// from zero, then clamps to the action grid.  Raw magnitudes over 180 are
// corrupt input.
inline CameraQuant quantize_camera(double raw) {
    if (!(std::abs(raw) <= 180.0)) throw DataError("camera delta out of range: " + std::to_string(raw));
    CameraQuant q;
    q.raw = raw;
    int v = 5 * static_cast<int>(std::llround(raw / 5.0));
    q.clamped = v < -45 || v > 45;
    q.value = clamp_int(v, -45, 45);
    return q;
}

struct ClampEvent {
    int64_t world_seed = 0;
    int step = 0;
    std::string axis;
    double raw = 0.0;
    int quantized = 0;
};

struct S0Result {
    std::vector<Trajectory> trajectories;
    std::vector<ClampEvent> clamp_log;
    int attempts = 0;
};

// Synthesizes "raw" demonstration logs by re-running the expert with
// continuous camera jitter (plus occasional out-of-grid spikes), then
// quantizing every camera delta onto the action grid.  Pre-clamp values are
// logged, quantized commands are what actually execute, so the stored
// trajectories are exactly replayable.
inline S0Result s0_build(const Tokenizer& tok, const StageOptions& opts) {
    S0Result res;
    const auto& cycle = stage_task_cycle();
    int trial = 0;
    const int max_trials = 20 * std::max(1, opts.s0_count) + 200;
    while (static_cast<int>(res.trajectories.size()) < opts.s0_count) {
        if (trial >= max_trials) throw DataError("raw-log synthesis exhausted its seed budget");
        const int64_t seed = opts.seed_start + 300000 + trial;
        TaskKind kind = cycle[trial % cycle.size()].first;
        ToolMode tool = (trial % 2 == 0) ? ToolMode::Manual : ToolMode::Tool;
        TaskSpec spec = pipeline_detail::make_spec(kind, tool, data_budget(opts, kind));
        ++trial;

        Rng noise(split(static_cast<uint64_t>(seed), "s0-noise"));
        int step_idx = 0;
        std::vector<ClampEvent> pending;
        auto mutate = [&](const ActionCommand& a) {
            ActionCommand m = a;
            double rp = a.cam_pitch_delta + opts.s0_pitch_noise * noise.next_gaussian();
            double ry = a.cam_yaw_delta + opts.s0_yaw_noise * noise.next_gaussian();
            if (opts.s0_spike_every > 0 && noise.below(static_cast<uint64_t>(opts.s0_spike_every)) == 0)
                ry += (noise.below(2) == 0 ? 60.0 : -60.0);
            CameraQuant qp = quantize_camera(rp);
            CameraQuant qy = quantize_camera(ry);
            if (qp.clamped) pending.push_back({seed, step_idx, "pitch", qp.raw, qp.value});
            if (qy.clamped) pending.push_back({seed, step_idx, "yaw", qy.raw, qy.value});
            m.cam_pitch_delta = qp.value;
            m.cam_yaw_delta = qy.value;
            ++step_idx;
            return m;
        };
        ExpertRun run = run_expert_capture(world_gen(seed, opts.world_size, spec), spec,
                                           spec.budget_steps, mutate);
        if (!run.success) continue;

        Trajectory tr;
        tr.name = std::string("s0-") + task_kind_name(kind) + "-" + std::to_string(seed);
        tr.id = seed;
        tr.world_seed = seed;
        tr.task = spec;
        tr.source_stage = "s0";
        tr.success = true;
        tr.turns = pipeline_detail::turns_from_run(tok, spec, run);
        res.trajectories.push_back(std::move(tr));
        res.clamp_log.insert(res.clamp_log.end(), pending.begin(), pending.end());
    }
    res.attempts = trial;
    return res;
}

// ---------------------------------------------------------------------------
// Stage 1: expert demonstrations (vision -> action)
// ---------------------------------------------------------------------------

inline std::vector<Trajectory> s1_build(const Tokenizer& tok, const StageOptions& opts) {
    std::vector<Trajectory> out;
    const auto& cycle = stage_task_cycle();
    int trial = 0;
    const int max_trials = 20 * std::max(1, opts.s1_count) + 200;
    while (static_cast<int>(out.size()) < opts.s1_count) {
        if (trial >= max_trials) throw DataError("expert data generation exhausted its seed budget");
        const int64_t seed = opts.seed_start + trial;
        TaskKind kind = cycle[trial % cycle.size()].first;
        ToolMode tool = (trial % 2 == 0) ? ToolMode::Manual : ToolMode::Tool;
        TaskSpec spec = pipeline_detail::make_spec(kind, tool, data_budget(opts, kind));
        ++trial;

        ExpertRun run = run_expert_capture(world_gen(seed, opts.world_size, spec), spec, spec.budget_steps);
        if (!run.success) continue;  // only successful demonstrations are kept

        Trajectory tr;
        tr.name = std::string("s1-") + task_kind_name(kind) + "-" + std::to_string(seed);
        tr.id = seed;
        tr.world_seed = seed;
        tr.task = spec;
        tr.source_stage = "s1";
        tr.success = true;
        tr.turns = pipeline_detail::turns_from_run(tok, spec, run);
        out.push_back(std::move(tr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 2: rationale annotation (vision -> reasoning -> action)
// ---------------------------------------------------------------------------

// Annotates the first `s2_count` demonstrations with scripted rationales.
// Worlds are regenerated from the stored seed and replayed, so the stage
// only needs the serialized trajectories.
inline std::vector<Trajectory> s2_build(const std::vector<Trajectory>& s1, const Tokenizer& tok,
                                        const StageOptions& opts) {
    std::vector<Trajectory> out;
    const size_t n = std::min<size_t>(opts.s2_count, s1.size());
    for (size_t i = 0; i < n; ++i) {
        const Trajectory& src = s1[i];
        std::vector<ActionCommand> actions = trajectory_actions(src, tok);
        std::vector<WorldState> states = replay_states(src.world_seed, opts.world_size, src.task, actions);

        Trajectory tr = src;
        tr.name = "s2-" + src.name.substr(3);
        tr.source_stage = "s2";
        for (size_t k = 0; k < tr.turns.size(); ++k) {
            tr.turns[k].reasoning_tokens = tok.word_ids(reasoner(states[k], src.task, actions[k]));
            tr.turns[k].w_reason = 1;
        }
        out.push_back(std::move(tr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 3: reflective fine-tuning pairs
// ---------------------------------------------------------------------------

struct S3Result {
    std::vector<Trajectory> trajectories;
    int attempts = 0;
};

// Rolls the current policy at temperature against the expert on shared
// worlds.  When the expert outcome beats the policy outcome, the first
// action divergence becomes a single-turn lesson: the policy's own (masked)
// rationales, the re-observe trigger, the corrective rationale and action,
// and the true frame that follows the correction.
inline S3Result s3_build(const Params& params, const Tokenizer& tok, const StageOptions& opts) {
    S3Result res;
    static const TaskKind kTasks[4] = {TaskKind::CollectWood, TaskKind::CollectWood,
                                       TaskKind::CollectGrass, TaskKind::CollectDirt};
    int j = 0;
    const int max_trials = 50 * std::max(1, opts.s3_count) + 200;
    while (static_cast<int>(res.trajectories.size()) < opts.s3_count) {
        if (j >= max_trials) {
            if (res.trajectories.empty())
                throw DataError("reflective pair mining found no divergences");
            break;  // partial yield is usable; caller sees the count
        }
        const int64_t seed = opts.seed_start + 100000 + j;
        TaskKind kind = kTasks[j % 4];
        ToolMode tool = (j % 4 == 1) ? ToolMode::Tool : ToolMode::Manual;
        TaskSpec spec = pipeline_detail::make_spec(kind, tool, opts.collect_budget);
        ++j;

        AgentOptions aopts;
        aopts.temperature = opts.s3_temperature;
        aopts.sample_seed = split(static_cast<uint64_t>(seed), "s3-rollout");
        aopts.limits = opts.limits;
        Env menv(world_gen(seed, opts.world_size, spec), spec);
        EpisodeRecord mep = run_basic(params, tok, menv, aopts);

        Env xenv(world_gen(seed, opts.world_size, spec), spec);
        EpisodeRecord xep = run_expert_episode(xenv);

        bool expert_better = (xep.final_metric.success && !mep.final_metric.success) ||
                             xep.final_metric.value > mep.final_metric.value;
        if (!expert_better) continue;

        std::vector<ActionCommand> ma, xa;
        for (const auto& r : mep.records) ma.push_back(r.action);
        for (const auto& r : xep.records) xa.push_back(r.action);
        auto div = first_divergence(ma, xa);
        if (!div || *div >= ma.size() || *div >= xa.size()) continue;
        const size_t dv = *div;

        // Both rollouts share the action prefix, so one replay gives the
        // divergence state for correction, rationale, and true next frame.
        std::vector<ActionCommand> prefix(xa.begin(), xa.begin() + dv);
        WorldState st = world_gen(seed, opts.world_size, spec);
        for (const ActionCommand& a : prefix) step(st, a);
        const ActionCommand corrective = xa[dv];
        std::vector<std::string> positive = reasoner(st, spec, corrective);
        // Exclusive prefix: rationales from the turns before the divergence.
        std::vector<std::vector<std::string>> negatives;
        for (size_t i = 0; i < dv; ++i) negatives.push_back(tok.words(mep.records[i].turn.reasoning_tokens));
        ReviewComposition review = compose_review(negatives, positive, opts.max_neg_turns);

        WorldState st_next = st;
        step(st_next, corrective);

        Turn turn;
        turn.obs_tokens = mep.records[dv].turn.obs_tokens;
        turn.task_tokens = task_token_ids(tok, spec);
        turn.prev_action_tokens = dv == 0 ? tok.word_ids({"none"})
                                          : tok.word_ids(action_words(xa[dv - 1]));
        turn.reasoning_tokens = tok.word_ids(review.words);
        turn.action_tokens = tok.word_ids(action_words(corrective));
        turn.pred_frame_tokens = pipeline_detail::obs_ids(tok, render(st_next));
        turn.w_reason = 1;
        turn.w_action = 1;
        turn.w_frame = 1;
        turn.neg_prefix = review.neg_len;

        Trajectory tr;
        tr.name = std::string("s3-") + task_kind_name(kind) + "-" + std::to_string(seed);
        tr.id = seed;
        tr.world_seed = seed;
        tr.task = spec;
        tr.source_stage = "s3";
        tr.success = xep.final_metric.success;
        tr.turns.push_back(std::move(turn));
        res.trajectories.push_back(std::move(tr));
    }
    res.attempts = j;
    return res;
}

// ---------------------------------------------------------------------------
// Stage 4: imagination alignment
// ---------------------------------------------------------------------------

// Dreams `s4_depth` turns from a fresh world, then replays the dreamed
// actions for real; each imagined turn keeps its sampled rationale/action as
// context but is supervised (frame span only) toward the true frame the
// replayed action produced.  Depth 0 yields an empty stage.
inline std::vector<Trajectory> s4_build(const Params& params, const Tokenizer& tok,
                                        const StageOptions& opts) {
    std::vector<Trajectory> out;
    if (opts.s4_depth <= 0 || opts.s4_count <= 0) return out;
    TurnGrammar grammar(tok, opts.limits);
    const auto& cycle = stage_task_cycle();
    for (int j = 0; j < opts.s4_count; ++j) {
        const int64_t seed = opts.seed_start + 200000 + j;
        TaskKind kind = cycle[j % cycle.size()].first;
        ToolMode tool = (j % 2 == 0) ? ToolMode::Manual : ToolMode::Tool;
        TaskSpec spec = pipeline_detail::make_spec(kind, tool,
                                                   std::max(data_budget(opts, kind), opts.s4_depth));
        Env env(world_gen(seed, opts.world_size, spec), spec);

        Frame f0 = env.render();
        std::vector<int32_t> obs0 = pipeline_detail::obs_ids(tok, f0);
        Decoder dec(params);
        dec.append(TokenLayout::kBos);
        Rng rng(split(static_cast<uint64_t>(seed), "s4-dream"));

        env.begin_dream();
        std::vector<Turn> dreams = dream_rollout(dec, tok, grammar, obs0, task_token_ids(tok, spec),
                                                 tok.word_ids({"none"}), opts.s4_depth,
                                                 opts.s4_temperature, rng);
        env.end_dream();

        std::vector<Frame> real_frames{f0};
        for (const Turn& d : dreams) {
            env.step(action_from_words(tok.words(d.action_tokens)));
            real_frames.push_back(env.render());
        }

        Trajectory tr;
        tr.name = std::string("s4-") + task_kind_name(kind) + "-" + std::to_string(seed);
        tr.id = seed;
        tr.world_seed = seed;
        tr.task = spec;
        tr.source_stage = "s4";
        tr.success = env.metric().success;
        for (size_t k = 0; k < dreams.size(); ++k) {
            Turn t = dreams[k];
            t.pred_frame_tokens = pipeline_detail::obs_ids(tok, real_frames[k + 1]);
            t.w_reason = 0;
            t.w_action = 0;
            t.w_frame = 1;
            t.neg_prefix = 0;
            tr.turns.push_back(std::move(t));
        }
        out.push_back(std::move(tr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sequence packing
// ---------------------------------------------------------------------------

struct PackedRow {
    std::vector<int32_t> tokens;
    std::vector<int32_t> pos;   // restarts at each segment
    std::vector<int32_t> seg;   // segment index within row; -1 for padding
    std::vector<uint8_t> weight;
    std::vector<uint8_t> role;
    std::vector<std::pair<int, int>> segments;  // (start, length)
};

struct PackedDataset {
    int pack_len = 0;
    int vocab = 0;
    std::vector<PackedRow> rows;

    int64_t total_weight() const {
        int64_t s = 0;
        for (const auto& r : rows)
            for (uint8_t w : r.weight) s += w;
        return s;
    }
};

// Packs serialized trajectories into fixed-length rows.  Long trajectories
// are split at turn boundaries (BOS glued to the first piece, EOS to the
// last); the resulting segments are placed first-fit-decreasing, every row
// padded to pack_len.  Token loss weights ride along unchanged, so packing
// conserves the total supervised token count.
inline PackedDataset pack_sequences(const std::vector<Trajectory>& trajs, int pack_len,
                                    const Tokenizer& tok) {
    if (pack_len < 2) throw ConfigError("pack length too small");
    struct Segment {
        std::vector<int32_t> tokens;
        std::vector<uint8_t> weight, role;
        size_t order;
    };
    std::vector<Segment> segments;

    for (const Trajectory& tr : trajs) {
        // Per-turn piece boundaries over the serialized stream.
        std::vector<int> piece_len;
        for (size_t i = 0; i < tr.turns.size(); ++i) {
            int len = tr.turns[i].token_len();
            if (i == 0) len += 1;                    // BOS
            if (i + 1 == tr.turns.size()) len += 1;  // EOS
            piece_len.push_back(len);
        }
        if (tr.turns.empty()) piece_len.push_back(2);  // degenerate BOS+EOS

        TokenizedTurn ser = serialize_trajectory(tr, tok);
        size_t off = 0;
        Segment cur;
        cur.order = segments.size();
        for (int len : piece_len) {
            if (len > pack_len)
                throw DataError("trajectory " + tr.name + " has a turn longer than the row length");
            if (static_cast<int>(cur.tokens.size()) + len > pack_len) {
                segments.push_back(std::move(cur));
                cur = Segment{};
                cur.order = segments.size();
            }
            cur.tokens.insert(cur.tokens.end(), ser.tokens.begin() + off, ser.tokens.begin() + off + len);
            cur.weight.insert(cur.weight.end(), ser.weight.begin() + off, ser.weight.begin() + off + len);
            cur.role.insert(cur.role.end(), ser.role.begin() + off, ser.role.begin() + off + len);
            off += len;
        }
        if (off != ser.tokens.size()) throw Error("packing bookkeeping out of sync");
        segments.push_back(std::move(cur));
    }

    // First-fit decreasing over segment lengths; stable on original order.
    std::vector<size_t> idx(segments.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return segments[a].tokens.size() > segments[b].tokens.size();
    });

    PackedDataset ds;
    ds.pack_len = pack_len;
    ds.vocab = tok.layout.vocab_size();
    std::vector<int> room;
    for (size_t si : idx) {
        const Segment& s = segments[si];
        int need = static_cast<int>(s.tokens.size());
        size_t row = ds.rows.size();
        for (size_t r = 0; r < ds.rows.size(); ++r)
            if (room[r] >= need) {
                row = r;
                break;
            }
        if (row == ds.rows.size()) {
            ds.rows.push_back({});
            room.push_back(pack_len);
        }
        PackedRow& pr = ds.rows[row];
        int start = pack_len - room[row];
        int seg_id = static_cast<int>(pr.segments.size());
        pr.segments.push_back({start, need});
        for (int i = 0; i < need; ++i) {
            pr.tokens.push_back(s.tokens[i]);
            pr.pos.push_back(i);
            pr.seg.push_back(seg_id);
            pr.weight.push_back(s.weight[i]);
            pr.role.push_back(s.role[i]);
        }
        room[row] -= need;
    }
    for (PackedRow& pr : ds.rows) {
        int pad_pos = 0;
        while (static_cast<int>(pr.tokens.size()) < pack_len) {
            pr.tokens.push_back(TokenLayout::kPad);
            pr.pos.push_back(pad_pos++);
            pr.seg.push_back(-1);
            pr.weight.push_back(0);
            pr.role.push_back(0);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Which supervised spans stay on.  Mask ablations re-weight the same packed
// rows, so data and batching stay identical across rows of the study.
struct AblationFlags {
    bool use_reason = true;
    bool use_action = true;
    bool use_frame = true;

    double factor(uint8_t role) const {
        switch (static_cast<TokenRole>(role)) {
            case TokenRole::Reason: return use_reason ? 1.0 : 0.0;
            case TokenRole::Action: return use_action ? 1.0 : 0.0;
            case TokenRole::Frame: return use_frame ? 1.0 : 0.0;
            case TokenRole::None: return 1.0;
        }
        return 1.0;
    }
};

// Gathers rows into a next-token training batch.  The stored per-token
// weights describe each token as a *target*; the batch mask shifts them one
// position left (mask[p] supervises the prediction of token p+1) and cuts
// segment boundaries.
inline TrainBatch make_batch(const PackedDataset& ds, const std::vector<int>& row_ids,
                             const AblationFlags& flags = {}) {
    TrainBatch b;
    b.rows = static_cast<int>(row_ids.size());
    b.len = ds.pack_len;
    size_t total = static_cast<size_t>(b.rows) * b.len;
    b.tokens.resize(total);
    b.targets.resize(total);
    b.pos.resize(total);
    b.seg.resize(total);
    b.mask.resize(total);
    for (int r = 0; r < b.rows; ++r) {
        int id = row_ids[r];
        if (id < 0 || id >= static_cast<int>(ds.rows.size())) throw DataError("batch row out of range");
        const PackedRow& pr = ds.rows[id];
        for (int p = 0; p < b.len; ++p) {
            size_t at = static_cast<size_t>(r) * b.len + p;
            b.tokens[at] = pr.tokens[p];
            b.pos[at] = pr.pos[p];
            b.seg[at] = pr.seg[p];
            bool chained = p + 1 < b.len && pr.seg[p + 1] == pr.seg[p] && pr.seg[p] >= 0;
            b.targets[at] = chained ? pr.tokens[p + 1] : TokenLayout::kPad;
            b.mask[at] = chained ? pr.weight[p + 1] * flags.factor(pr.role[p + 1]) : 0.0;
        }
    }
    return b;
}

// Deterministic with-replacement row sampling for step `step`.
inline std::vector<int> batch_rows_for_step(int n_rows, int batch, int64_t step, uint64_t seed) {
    if (n_rows <= 0) throw DataError("empty dataset");
    std::vector<int> out(batch);
    uint64_t key = split(seed, "batch");
    for (int b = 0; b < batch; ++b)
        out[b] = static_cast<int>(draw(key, static_cast<uint64_t>(step) * batch + b) % n_rows);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory IO
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> kStages = {"s0", "s1", "s2", "s3", "s4"};
    return kStages;
}

inline int stage_rank(const std::string& s) {
    const auto& names = stage_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == s) return static_cast<int>(i);
    throw DataError("unknown stage: " + s);
}

inline void save_trajectories_jsonl(const std::filesystem::path& path,
                                    const std::vector<Trajectory>& trajs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    for (const Trajectory& tr : trajs) out << trajectory_to_json(tr).dump() << "\n";
    if (!out.good()) throw DataError("write failed: " + path.string());
}

inline std::vector<Trajectory> load_trajectories_jsonl(const std::filesystem::path& path,
                                                       const Tokenizer& tok) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::vector<Trajectory> out;
    std::map<std::string, size_t> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
        Trajectory tr = trajectory_from_json(j);
        validate_trajectory(tr, tok);
        if (!seen.emplace(tr.name, lineno).second)
            throw DataError(path.string() + ": duplicate trajectory name " + tr.name);
        out.push_back(std::move(tr));
    }
    return out;
}

inline void write_stage_manifest(const std::filesystem::path& path, const std::string& stage,
                                 size_t count, const StageOptions& opts, const Tokenizer& tok,
                                 const std::string& config_hash) {
    ordered_json j;
    j["tool_version"] = kToolVersion;
    j["stage"] = stage;
    j["count"] = count;
    j["world_size"] = opts.world_size;
    j["seed_start"] = opts.seed_start;
    j["vocab_size"] = tok.layout.vocab_size();
    j["image_codes"] = tok.layout.image_count;
    j["config_hash"] = config_hash;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Training-set assembly
// ---------------------------------------------------------------------------

// Later stages refine earlier ones: when two stages carry the same
// trajectory id, the higher-stage copy wins (an s2 annotation supersedes its
// s1 original).  Output order is (stage rank, id), then repeats multiply the
// sparse corrective/imagination stages.
inline std::vector<Trajectory> assemble_training_set(const std::vector<std::vector<Trajectory>>& stages,
                                                     int s3_repeat = 1, int s4_repeat = 1) {
    std::map<int64_t, const Trajectory*> by_id;
    for (const auto& stage : stages)
        for (const Trajectory& tr : stage) {
            auto it = by_id.find(tr.id);
            if (it == by_id.end() || stage_rank(tr.source_stage) > stage_rank(it->second->source_stage))
                by_id[tr.id] = &tr;
        }
    std::vector<const Trajectory*> ordered;
    for (const auto& [id, tr] : by_id) ordered.push_back(tr);
    std::stable_sort(ordered.begin(), ordered.end(), [](const Trajectory* a, const Trajectory* b) {
        int ra = stage_rank(a->source_stage), rb = stage_rank(b->source_stage);
        return std::tie(ra, a->id) < std::tie(rb, b->id);
    });
    std::vector<Trajectory> out;
    for (const Trajectory* tr : ordered) {
        int rep = 1;
        if (tr->source_stage == "s3") rep = std::max(1, s3_repeat);
        if (tr->source_stage == "s4") rep = std::max(1, s4_repeat);
        for (int k = 0; k < rep; ++k) out.push_back(*tr);
    }
    return out;
}

}  // namespace rig
