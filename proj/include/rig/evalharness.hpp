#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rig/agent.hpp"
#include "rig/pipeline.hpp"
#include "rig/train.hpp"
#include "rig/version.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Embodied evaluation
// ---------------------------------------------------------------------------

struct EmbodiedStats {
    std::vector<double> values;    // task metric per seed, shared-seed aligned
    std::vector<bool> successes;
    double mean = 0.0;
    double stdev = 0.0;   // sample standard deviation (n-1)
    double sem = 0.0;     // standard error of the mean
    double success_rate = 0.0;
    int64_t env_accesses = 0;
    int64_t dream_env_accesses = 0;
    int n = 0;
};

inline void finalize_stats(EmbodiedStats& s) {
    s.n = static_cast<int>(s.values.size());
    if (s.n == 0) return;
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = sum / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
        s.stdev = std::sqrt(ss / (s.n - 1));
        s.sem = s.stdev / std::sqrt(static_cast<double>(s.n));
    }
    int64_t succ = 0;
    for (bool b : s.successes) succ += b ? 1 : 0;
    s.success_rate = static_cast<double>(succ) / s.n;
}

// Runs one episode per world seed (seed_start + i).  All arms of a
// comparison must be called with the same seed range so the per-seed values
// pair up.
inline EmbodiedStats eval_embodied(const std::function<EpisodeRecord(int64_t world_seed)>& runner,
                                   int64_t seed_start, int count) {
    EmbodiedStats s;
    for (int i = 0; i < count; ++i) {
        EpisodeRecord ep = runner(seed_start + i);
        s.values.push_back(ep.final_metric.value);
        s.successes.push_back(ep.final_metric.success);
        s.env_accesses += ep.env_accesses;
        s.dream_env_accesses += ep.dream_env_accesses;
    }
    finalize_stats(s);
    return s;
}

// Paired comparison over shared seeds: mean difference and its standard
// error (sample std of per-seed differences / sqrt n).
struct PairedMargin {
    double mean_diff = 0.0;
    double sem_diff = 0.0;
    int n = 0;
};

inline PairedMargin paired_margin(const EmbodiedStats& a, const EmbodiedStats& b) {
    if (a.values.size() != b.values.size() || a.values.empty())
        throw DataError("paired margin requires equal, nonempty shared-seed runs");
    PairedMargin m;
    m.n = static_cast<int>(a.values.size());
    std::vector<double> d(m.n);
    for (int i = 0; i < m.n; ++i) d[i] = a.values[i] - b.values[i];
    double sum = 0.0;
    for (double v : d) sum += v;
    m.mean_diff = sum / m.n;
    if (m.n > 1) {
        double ss = 0.0;
        for (double v : d) ss += (v - m.mean_diff) * (v - m.mean_diff);
        m.sem_diff = std::sqrt(ss / (m.n - 1)) / std::sqrt(static_cast<double>(m.n));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Generation evaluation (teacher forced)
// ---------------------------------------------------------------------------

struct GenerationEval {
    double token_accuracy = 0.0;   // all supervised targets
    double reason_accuracy = 0.0;
    double action_accuracy = 0.0;
    double frame_token_accuracy = 0.0;
    double mean_psnr = 0.0;        // decoded predicted frame vs decoded target frame
    int frames = 0;
    int64_t positions = 0;
};

// Teacher-forced pass over held-out trajectories.  Every supervised target
// position contributes to token accuracy (split by role); each 16-code
// predicted-frame run is decoded (argmax restricted to image codes) and
// scored in pixel space.  Held-out ids must be disjoint from training ids.
inline GenerationEval eval_generation(const Params& params, const Tokenizer& tok,
                                      const std::vector<Trajectory>& heldout,
                                      const std::set<int64_t>& train_ids, int pack_len) {
    for (const Trajectory& tr : heldout)
        if (train_ids.count(tr.id))
            throw DataError("held-out trajectory " + tr.name + " appears in the training set");

    PackedDataset ds = pack_sequences(heldout, pack_len, tok);
    Workspace ws;
    ws.rows.resize(1);
    const int V = params.cfg().vocab;
    const TokenLayout& L = tok.layout;

    int64_t correct = 0, total = 0;
    std::map<uint8_t, std::pair<int64_t, int64_t>> by_role;  // role -> (correct, total)
    double psnr_sum = 0.0;
    int frames = 0;

    for (const PackedRow& pr : ds.rows) {
        const int n = static_cast<int>(pr.tokens.size());
        model_detail::forward_row(params, pr.tokens.data(), pr.pos.data(), pr.seg.data(), n, ws,
                                  ws.rows[0]);
        std::vector<int32_t> run_true, run_pred;
        for (int p = 0; p + 1 < n; ++p) {
            bool chained = pr.seg[p + 1] == pr.seg[p] && pr.seg[p] >= 0;
            const double* lg = ws.rows[0].logits.data() + static_cast<size_t>(p) * V;
            if (chained && pr.weight[p + 1] > 0) {
                int best = 0;
                for (int v = 1; v < V; ++v)
                    if (lg[v] > lg[best]) best = v;
                bool ok = best == pr.tokens[p + 1];
                correct += ok;
                total += 1;
                auto& rr = by_role[pr.role[p + 1]];
                rr.first += ok;
                rr.second += 1;
            }
            // Predicted-frame runs: targets that are image codes inside a
            // Frame-role span, 16 per turn.
            bool img_target = chained && static_cast<TokenRole>(pr.role[p + 1]) == TokenRole::Frame &&
                              L.is_image(pr.tokens[p + 1]);
            if (img_target) {
                run_true.push_back(pr.tokens[p + 1]);
                int bi = 0;
                const int ib = L.image_base();
                for (int v = 1; v < L.image_count; ++v)
                    if (lg[ib + v] > lg[ib + bi]) bi = v;
                run_pred.push_back(ib + bi);
                if (run_true.size() == 16) {
                    Frame ft = tok.decode_frame(run_true);
                    Frame fp = tok.decode_frame(run_pred);
                    psnr_sum += psnr(ft, fp);
                    frames += 1;
                    run_true.clear();
                    run_pred.clear();
                }
            } else if (!run_true.empty()) {
                run_true.clear();  // malformed run; never expected, kept total
                run_pred.clear();
            }
        }
    }

    GenerationEval ev;
    ev.positions = total;
    ev.token_accuracy = total ? static_cast<double>(correct) / total : 0.0;
    auto role_acc = [&](TokenRole r) {
        auto it = by_role.find(static_cast<uint8_t>(r));
        if (it == by_role.end() || it->second.second == 0) return 0.0;
        return static_cast<double>(it->second.first) / it->second.second;
    };
    ev.reason_accuracy = role_acc(TokenRole::Reason);
    ev.action_accuracy = role_acc(TokenRole::Action);
    ev.frame_token_accuracy = role_acc(TokenRole::Frame);
    ev.frames = frames;
    ev.mean_psnr = frames ? psnr_sum / frames : 0.0;
    return ev;
}

// ---------------------------------------------------------------------------
// Reasoning evaluation (independent template inversion)
// ---------------------------------------------------------------------------
//
// This matcher re-derives the egocentric geometry and phrase rules on its
// own (no calls into the reasoner) so that oracle and model are judged by a
// separate implementation of the claimed semantics.

struct ParsedReasoning {
    bool well_formed = false;
    bool no_target = false;
    std::string entity;
    int k = -1;
    std::string direction;
    std::vector<std::string> phrase;
};

namespace eval_detail {

inline std::optional<TileKind> tile_from_entity(const std::string& w) {
    if (w == "Tree") return TileKind::Tree;
    if (w == "Grass") return TileKind::Grass;
    if (w == "Dirt") return TileKind::Dirt;
    if (w == "Stone") return TileKind::Stone;
    if (w == "Pit") return TileKind::Pit;
    if (w == "Block") return TileKind::PlacedBlock;
    return std::nullopt;
}

// Facing basis, derived afresh: quarter-turn index with clockwise ties, then
// forward/right unit offsets per cardinal.
inline void facing_basis(int yaw, int& fr, int& fc, int& rr, int& rc) {
    int q = ((yaw + 45) / 90) % 4;
    switch (q) {
        case 0: fr = -1; fc = 0; rr = 0; rc = 1; break;   // north
        case 1: fr = 0; fc = 1; rr = 1; rc = 0; break;    // east
        case 2: fr = 1; fc = 0; rr = 0; rc = -1; break;   // south
        default: fr = 0; fc = -1; rr = -1; rc = 0; break; // west
    }
}

struct Sighting {
    int cheb, ahead, lat, row, col;
};

// Nearest window cell holding `kind` (ahead -1..5, lateral -3..3, origin
// excluded), preferring smaller Chebyshev distance, then world row, col.
inline std::optional<Sighting> find_nearest(const WorldState& st, TileKind kind) {
    int fr, fc, rr, rc;
    facing_basis(st.yaw_deg, fr, fc, rr, rc);
    std::optional<Sighting> best;
    for (int ahead = -1; ahead <= 5; ++ahead)
        for (int lat = -3; lat <= 3; ++lat) {
            if (ahead == 0 && lat == 0) continue;
            int r = st.agent_row + ahead * fr + lat * rr;
            int c = st.agent_col + ahead * fc + lat * rc;
            if (r < 0 || r >= st.size || c < 0 || c >= st.size) continue;
            if (st.tile(r, c) != kind) continue;
            int cheb = std::max(std::abs(ahead), std::abs(lat));
            if (!best || cheb < best->cheb ||
                (cheb == best->cheb && std::pair{r, c} < std::pair{best->row, best->col}))
                best = Sighting{cheb, ahead, lat, r, c};
        }
    return best;
}

inline std::string sector_of(int ahead, int lat) {
    if (ahead > 0 && ahead >= std::abs(lat)) return "ahead";
    if (ahead < 0 && -ahead >= std::abs(lat)) return "behind";
    return lat > 0 ? "right" : "left";
}

// Expected action phrase, re-derived from the command semantics.
inline std::vector<std::string> expected_phrase(const WorldState& st, const ActionCommand& a) {
    int dp = clamp_int(round_mult5(a.cam_pitch_delta), -45, 45);
    int dy = clamp_int(round_mult5(a.cam_yaw_delta), -45, 45);
    int pitch_after = clamp_int(st.pitch_deg + dp, -90, 90);
    if (a.place && a.jump && pitch_after >= 45) return {"building", "up"};
    if (a.attack && pitch_after >= 45) return {"digging", "down"};
    if (a.attack) return {"attacking", "it"};
    if (dy != 0) return {"turning", dy > 0 ? "right" : "left"};
    if (dp != 0) return {"looking", dp > 0 ? "down" : "up"};
    if (a.forward) return {"moving", "forward"};
    if (a.back) return {"stepping", "back"};
    if (a.left) return {"stepping", "left"};
    if (a.right) return {"stepping", "right"};
    if (a.jump) return {"jumping"};
    return {"waiting"};
}

}  // namespace eval_detail

// Parses "a <E> is <k> tiles <dir> ; <phrase>" or "no target visible ;
// <phrase>".  If the re-observe trigger appears, only the text after its
// last occurrence is parsed (the prefix is quoted context, not a claim).
inline ParsedReasoning parse_reasoning(std::vector<std::string> words) {
    const auto& trig = trigger_phrase();
    for (size_t i = 0; words.size() >= trig.size() && i + trig.size() <= words.size();) {
        if (std::equal(trig.begin(), trig.end(), words.begin() + i)) {
            words.erase(words.begin(), words.begin() + i + trig.size());
            i = 0;
        } else {
            ++i;
        }
    }
    ParsedReasoning p;
    if (words.size() >= 4 && words[0] == "no" && words[1] == "target" && words[2] == "visible" &&
        words[3] == ";") {
        p.well_formed = true;
        p.no_target = true;
        p.phrase.assign(words.begin() + 4, words.end());
        return p;
    }
    if (words.size() >= 7 && words[0] == "a" && words[2] == "is" && words[4] == "tiles" &&
        words[6] == ";") {
        const std::string& num = words[3];
        if (num.size() == 1 && num[0] >= '0' && num[0] <= '9' &&
            eval_detail::tile_from_entity(words[1])) {
            p.well_formed = true;
            p.entity = words[1];
            p.k = num[0] - '0';
            p.direction = words[5];
            p.phrase.assign(words.begin() + 7, words.end());
            return p;
        }
    }
    return p;
}

// Checks one rationale against the true state and the executed action:
// entity claims must name the nearest in-window tile of that kind at the
// right distance and sector; "below" claims require a dig site underfoot;
// "no target" requires the task target to be absent from the window; the
// action phrase must match the command.
inline bool reasoning_consistent(const WorldState& st, const TaskSpec& task, const ActionCommand& act,
                                 const std::vector<std::string>& words) {
    ParsedReasoning p = parse_reasoning(words);
    if (!p.well_formed) return false;
    if (p.phrase != eval_detail::expected_phrase(st, act)) return false;
    if (p.no_target) {
        if (task.kind == TaskKind::Explore) return true;
        return !eval_detail::find_nearest(st, task_target_tile(task.kind)).has_value();
    }
    if (p.direction == "below")
        return p.entity == "Dirt" && p.k == 0 &&
               (st.tile(st.agent_row, st.agent_col) == TileKind::Dirt || st.agent_z < 0);
    auto kind = eval_detail::tile_from_entity(p.entity);
    if (!kind) return false;
    auto hit = eval_detail::find_nearest(st, *kind);
    if (!hit) return false;
    return hit->cheb == p.k && eval_detail::sector_of(hit->ahead, hit->lat) == p.direction;
}

struct ReasoningEval {
    int64_t turns = 0;
    int64_t consistent = 0;
    int64_t well_formed = 0;
    double consistency = 0.0;
    double well_formed_rate = 0.0;
};

// Rolls greedy episodes on eval worlds and scores each emitted rationale
// against the true state it observed.  States are recovered by replaying the
// executed actions, so the scoring never touches the live environment.
inline ReasoningEval eval_reasoning(const Params& params, const Tokenizer& tok, const TaskSpec& task,
                                    int world_size, int64_t seed_start, int episodes, int max_steps,
                                    const SampleLimits& limits = {}) {
    ReasoningEval ev;
    for (int e = 0; e < episodes; ++e) {
        int64_t seed = seed_start + e;
        AgentOptions opts;
        opts.temperature = 0.0;
        opts.sample_seed = split(static_cast<uint64_t>(seed), "reason-eval");
        opts.limits = limits;
        opts.max_steps = max_steps;
        Env env(world_gen(seed, world_size, task), task);
        EpisodeRecord ep = run_basic(params, tok, env, opts);

        std::vector<ActionCommand> actions;
        for (const auto& r : ep.records) actions.push_back(r.action);
        std::vector<WorldState> states = replay_states(seed, world_size, task, actions);
        for (size_t i = 0; i < ep.records.size(); ++i) {
            std::vector<std::string> words = tok.words(ep.records[i].turn.reasoning_tokens);
            ev.turns += 1;
            ev.well_formed += parse_reasoning(words).well_formed ? 1 : 0;
            ev.consistent += reasoning_consistent(states[i], task, actions[i], words) ? 1 : 0;
        }
    }
    if (ev.turns > 0) {
        ev.consistency = static_cast<double>(ev.consistent) / ev.turns;
        ev.well_formed_rate = static_cast<double>(ev.well_formed) / ev.turns;
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Report helpers
// ---------------------------------------------------------------------------

inline std::string hex64(uint64_t v) {
    static const char* kHex = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = kHex[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string params_checksum(const Params& p) {
    return hex64(fnv1a64_bytes(p.data().data(), p.size() * sizeof(double)));
}

inline ordered_json stats_json(const EmbodiedStats& s) {
    ordered_json j;
    j["n"] = s.n;
    j["mean"] = s.mean;
    j["std"] = s.stdev;
    j["sem"] = s.sem;
    j["success_rate"] = s.success_rate;
    j["values"] = s.values;
    j["env_accesses"] = s.env_accesses;
    j["dream_env_accesses"] = s.dream_env_accesses;
    return j;
}

inline ordered_json report_header(const std::string& config_hash, const std::string& ckpt_checksum) {
    ordered_json j;
    j["tool_version"] = kToolVersion;
    j["config_hash"] = config_hash;
    j["checkpoint_checksum"] = ckpt_checksum;
    return j;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
    double x = 0.0;
    EmbodiedStats stats;
};

// Episode runner shared by sweeps and studies.
inline EpisodeRecord run_policy_episode(const Params& params, const Tokenizer& tok, const TaskSpec& task,
                                        int world_size, int64_t world_seed, int lookahead,
                                        const AgentOptions& base) {
    AgentOptions opts = base;
    opts.sample_seed = split(static_cast<uint64_t>(world_seed), "episode");
    Env env(world_gen(world_seed, world_size, task), task);
    if (lookahead > 0) return run_lookahead(params, tok, env, lookahead, opts);
    return run_basic(params, tok, env, opts);
}

// Planning-depth sweep.  Depth 0 goes through the exact reactive code path,
// so its episodes are bit-for-bit those of run_basic.
inline std::vector<SweepPoint> sweep_lookahead(const Params& params, const Tokenizer& tok,
                                               const TaskSpec& task, int world_size, int64_t seed_start,
                                               int count, const std::vector<int>& depths,
                                               const AgentOptions& base) {
    std::vector<SweepPoint> out;
    for (int n : depths) {
        EmbodiedStats s = eval_embodied(
            [&](int64_t seed) {
                return run_policy_episode(params, tok, task, world_size, seed, n, base);
            },
            seed_start, count);
        out.push_back({static_cast<double>(n), s});
    }
    return out;
}

}  // namespace rig
