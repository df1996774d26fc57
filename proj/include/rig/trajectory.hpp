#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rig/error.hpp"
#include "rig/minegrid.hpp"
#include "rig/seqmodel.hpp"
#include "rig/tokenizer.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Canonical action <-> word encoding
// ---------------------------------------------------------------------------

inline std::string camera_token(const char* axis, int v) {
    std::string t = axis;
    if (v > 0) t += "+";
    t += std::to_string(v);
    return t;
}

// Canonical word encoding: flags in fixed order, then nonzero camera deltas
// (pitch before yaw); an empty command is the single word "none".
inline std::vector<std::string> action_words(const ActionCommand& a) {
    std::vector<std::string> w;
    if (a.forward) w.push_back("forward");
    if (a.back) w.push_back("back");
    if (a.left) w.push_back("left");
    if (a.right) w.push_back("right");
    if (a.jump) w.push_back("jump");
    if (a.attack) w.push_back("attack");
    if (a.place) w.push_back("place");
    if (a.sprint) w.push_back("sprint");
    if (a.cam_pitch_delta != 0) w.push_back(camera_token("cam_p:", a.cam_pitch_delta));
    if (a.cam_yaw_delta != 0) w.push_back(camera_token("cam_y:", a.cam_yaw_delta));
    if (w.empty()) w.push_back("none");
    return w;
}

// Tolerant inverse: duplicate flags are idempotent, repeated camera tokens
// keep the last value, "none" contributes nothing.  Unknown words raise DataError.
inline ActionCommand action_from_words(const std::vector<std::string>& words) {
    ActionCommand a;
    for (const std::string& w : words) {
        if (w == "forward") a.forward = true;
        else if (w == "back") a.back = true;
        else if (w == "left") a.left = true;
        else if (w == "right") a.right = true;
        else if (w == "jump") a.jump = true;
        else if (w == "attack") a.attack = true;
        else if (w == "place") a.place = true;
        else if (w == "sprint") a.sprint = true;
        else if (w == "none") { /* no-op */ }
        else if (w.starts_with("cam_p:")) a.cam_pitch_delta = std::stoi(w.substr(6));
        else if (w.starts_with("cam_y:")) a.cam_yaw_delta = std::stoi(w.substr(6));
        else throw DataError("unknown action word: " + w);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Turns
// ---------------------------------------------------------------------------

// One interaction round.  All token fields hold GLOBAL ids; obs/pred frames
// include the IMG_OPEN/IMG_CLOSE delimiters (18 ids).  reasoning/action hold
// bare word ids (structural tokens are added at assembly time).
//
// Serialized AGT layout (indices relative to the AGT marker):
//   [0]=AGT [1..3]="The reasoning :" [4..4+y)=Y [4+y]="Next"
//   [5+y..6+y]="action :" [7+y..7+y+a)=A [7+y+a]="next"
//   [8+y+a..9+y+a]="frame :" [10+y+a..27+y+a]=P(18)
struct Turn {
    bool imagined = false;
    std::vector<int32_t> obs_tokens;
    std::vector<int32_t> task_tokens;
    std::vector<int32_t> prev_action_tokens;
    std::vector<int32_t> reasoning_tokens;
    std::vector<int32_t> action_tokens;
    std::vector<int32_t> pred_frame_tokens;

    uint8_t w_reason = 1, w_action = 1, w_frame = 1;
    int neg_prefix = 0;  // leading reasoning tokens that are loss-masked (RFT)

    int agt_len() const {
        return 28 + static_cast<int>(reasoning_tokens.size()) + static_cast<int>(action_tokens.size());
    }
    int hum_len() const {
        return (imagined ? 1 : 0) + 1 + static_cast<int>(obs_tokens.size()) +
               static_cast<int>(task_tokens.size()) + static_cast<int>(prev_action_tokens.size());
    }
    int token_len() const { return hum_len() + agt_len(); }
};

// Token roles, used for ablation re-masking and accuracy metrics.
enum class TokenRole : uint8_t { None = 0, Reason = 1, Action = 2, Frame = 3 };

struct TokenizedTurn {
    std::vector<int32_t> tokens;
    std::vector<uint8_t> weight;  // loss weight of each token when it is a target
    std::vector<uint8_t> role;
};

// Loss-mask spans over the AGT segment as (start, end, weight) triples that
// partition [0, agt_len) exactly once.  The AGT marker itself is weight 0.
inline std::vector<std::array<int, 3>> mask_spans(const Turn& t) {
    const int y = static_cast<int>(t.reasoning_tokens.size());
    const int a = static_cast<int>(t.action_tokens.size());
    if (t.neg_prefix < 0 || t.neg_prefix > y) throw DataError("negative prefix exceeds reasoning span");
    std::vector<std::array<int, 3>> spans;
    spans.push_back({0, 1, 0});
    auto push = [&](int s, int e, int w) {
        if (s >= e) return;
        if (!spans.empty() && spans.back()[1] == s && spans.back()[2] == w) spans.back()[1] = e;
        else spans.push_back({s, e, w});
    };
    // reasoning region: "The reasoning :" Y "Next"
    push(1, 4, t.w_reason);
    push(4, 4 + t.neg_prefix, 0);
    push(4 + t.neg_prefix, 5 + y, t.w_reason);
    // action region: "action :" A "next"
    push(5 + y, 8 + y + a, t.w_action);
    // frame region: "frame :" P
    push(8 + y + a, 28 + y + a, t.w_frame);
    return spans;
}

namespace traj_detail {

// Cached structural ids resolved against a tokenizer.
struct StructIds {
    int32_t the_, reasoning_, colon_, next_cap_, action_, next_, frame_;
    int32_t wait_, bang_, lets_, reobserve_, ellipsis_;

    explicit StructIds(const Tokenizer& tok)
        : the_(tok.word_id("The")),
          reasoning_(tok.word_id("reasoning")),
          colon_(tok.word_id(":")),
          next_cap_(tok.word_id("Next")),
          action_(tok.word_id("action")),
          next_(tok.word_id("next")),
          frame_(tok.word_id("frame")),
          wait_(tok.word_id("Wait")),
          bang_(tok.word_id("!")),
          lets_(tok.word_id("Let's")),
          reobserve_(tok.word_id("re-observe")),
          ellipsis_(tok.word_id("...")) {}

    std::vector<int32_t> trigger() const { return {wait_, bang_, lets_, reobserve_, ellipsis_}; }
};

}  // namespace traj_detail

inline std::vector<int32_t> hum_tokens(const Turn& t) {
    std::vector<int32_t> out;
    if (t.imagined) out.push_back(TokenLayout::kImagine);
    out.push_back(TokenLayout::kHum);
    out.insert(out.end(), t.obs_tokens.begin(), t.obs_tokens.end());
    out.insert(out.end(), t.task_tokens.begin(), t.task_tokens.end());
    out.insert(out.end(), t.prev_action_tokens.begin(), t.prev_action_tokens.end());
    return out;
}

inline std::vector<int32_t> agt_tokens(const Turn& t, const Tokenizer& tok) {
    traj_detail::StructIds s(tok);
    std::vector<int32_t> out;
    out.reserve(t.agt_len());
    out.push_back(TokenLayout::kAgt);
    out.push_back(s.the_);
    out.push_back(s.reasoning_);
    out.push_back(s.colon_);
    out.insert(out.end(), t.reasoning_tokens.begin(), t.reasoning_tokens.end());
    out.push_back(s.next_cap_);
    out.push_back(s.action_);
    out.push_back(s.colon_);
    out.insert(out.end(), t.action_tokens.begin(), t.action_tokens.end());
    out.push_back(s.next_);
    out.push_back(s.frame_);
    out.push_back(s.colon_);
    out.insert(out.end(), t.pred_frame_tokens.begin(), t.pred_frame_tokens.end());
    return out;
}

// Full turn tokens with per-token loss weights and roles.  HUM-side tokens
// are always weight 0; AGT-side weights follow mask_spans.
inline TokenizedTurn assemble_turn(const Turn& t, const Tokenizer& tok) {
    if (t.obs_tokens.size() != 18 || t.pred_frame_tokens.size() != 18)
        throw DataError("frame token fields must hold 18 ids (delimited)");
    TokenizedTurn out;
    std::vector<int32_t> hum = hum_tokens(t);
    std::vector<int32_t> agt = agt_tokens(t, tok);
    out.tokens = hum;
    out.tokens.insert(out.tokens.end(), agt.begin(), agt.end());
    out.weight.assign(out.tokens.size(), 0);
    out.role.assign(out.tokens.size(), 0);
    const int base = static_cast<int>(hum.size());
    for (const auto& sp : mask_spans(t))
        for (int i = sp[0]; i < sp[1]; ++i) out.weight[base + i] = static_cast<uint8_t>(sp[2]);
    const int y = static_cast<int>(t.reasoning_tokens.size());
    const int a = static_cast<int>(t.action_tokens.size());
    for (int i = 1; i < 5 + y; ++i) out.role[base + i] = static_cast<uint8_t>(TokenRole::Reason);
    for (int i = 5 + y; i < 8 + y + a; ++i) out.role[base + i] = static_cast<uint8_t>(TokenRole::Action);
    for (int i = 8 + y + a; i < 28 + y + a; ++i) out.role[base + i] = static_cast<uint8_t>(TokenRole::Frame);
    return out;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

struct Trajectory {
    std::string name;
    int64_t id = 0;
    int64_t world_seed = 0;
    TaskSpec task;
    std::string source_stage;  // "s0".."s4"
    bool success = false;
    std::vector<Turn> turns;
};

// Serialized token stream: BOS + turns + EOS (BOS/EOS weight 0, role none).
inline TokenizedTurn serialize_trajectory(const Trajectory& tr, const Tokenizer& tok) {
    TokenizedTurn out;
    out.tokens.push_back(TokenLayout::kBos);
    out.weight.push_back(0);
    out.role.push_back(0);
    for (const Turn& t : tr.turns) {
        TokenizedTurn tt = assemble_turn(t, tok);
        out.tokens.insert(out.tokens.end(), tt.tokens.begin(), tt.tokens.end());
        out.weight.insert(out.weight.end(), tt.weight.begin(), tt.weight.end());
        out.role.insert(out.role.end(), tt.role.begin(), tt.role.end());
    }
    out.tokens.push_back(TokenLayout::kEos);
    out.weight.push_back(0);
    out.role.push_back(0);
    return out;
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

inline ordered_json turn_to_json(const Turn& t) {
    ordered_json j;
    j["imagined"] = t.imagined;
    j["obs_tokens"] = t.obs_tokens;
    j["task_tokens"] = t.task_tokens;
    j["prev_action_tokens"] = t.prev_action_tokens;
    j["reasoning_tokens"] = t.reasoning_tokens;
    j["action_tokens"] = t.action_tokens;
    j["pred_frame_tokens"] = t.pred_frame_tokens;
    ordered_json spans = ordered_json::array();
    for (const auto& sp : mask_spans(t)) spans.push_back({sp[0], sp[1], sp[2]});
    j["mask_spans"] = std::move(spans);
    return j;
}

inline Turn turn_from_json(const ordered_json& j) {
    try {
        Turn t;
        t.imagined = j.at("imagined").get<bool>();
        t.obs_tokens = j.at("obs_tokens").get<std::vector<int32_t>>();
        t.task_tokens = j.at("task_tokens").get<std::vector<int32_t>>();
        t.prev_action_tokens = j.at("prev_action_tokens").get<std::vector<int32_t>>();
        t.reasoning_tokens = j.at("reasoning_tokens").get<std::vector<int32_t>>();
        t.action_tokens = j.at("action_tokens").get<std::vector<int32_t>>();
        t.pred_frame_tokens = j.at("pred_frame_tokens").get<std::vector<int32_t>>();

        // Recover the weight flags from the stored spans, then check that the
        // spans are exactly what this turn re-derives (schema consistency).
        const int y = static_cast<int>(t.reasoning_tokens.size());
        const int a = static_cast<int>(t.action_tokens.size());
        auto weight_at = [&](int idx) -> int {
            for (const auto& sp : j.at("mask_spans"))
                if (sp[0].get<int>() <= idx && idx < sp[1].get<int>()) return sp[2].get<int>();
            throw DataError("mask_spans do not cover the AGT segment");
        };
        t.w_reason = static_cast<uint8_t>(weight_at(1));
        t.w_action = static_cast<uint8_t>(weight_at(5 + y));
        t.w_frame = static_cast<uint8_t>(weight_at(8 + y + a));
        t.neg_prefix = 0;
        if (t.w_reason == 1 && y > 0) {
            int i = 4;
            while (i < 4 + y && weight_at(i) == 0) ++i;
            t.neg_prefix = i - 4;
        }
        ordered_json expect = ordered_json::array();
        for (const auto& sp : mask_spans(t)) expect.push_back({sp[0], sp[1], sp[2]});
        if (expect != j.at("mask_spans")) throw DataError("mask_spans inconsistent with turn layout");
        return t;
    } catch (const ordered_json::exception& e) {
        throw DataError(std::string("turn schema violation: ") + e.what());
    }
}

inline ordered_json trajectory_to_json(const Trajectory& tr) {
    ordered_json j;
    j["name"] = tr.name;
    j["id"] = tr.id;
    j["world_seed"] = tr.world_seed;
    j["task"] = {{"kind", task_kind_name(tr.task.kind)},
                 {"budget_steps", tr.task.budget_steps},
                 {"tool_mode", tool_mode_name(tr.task.tool_mode)}};
    j["source_stage"] = tr.source_stage;
    j["success"] = tr.success;
    ordered_json turns = ordered_json::array();
    for (const Turn& t : tr.turns) turns.push_back(turn_to_json(t));
    j["turns"] = std::move(turns);
    return j;
}

inline Trajectory trajectory_from_json(const ordered_json& j) {
    try {
        Trajectory tr;
        tr.name = j.at("name").get<std::string>();
        tr.id = j.at("id").get<int64_t>();
        tr.world_seed = j.at("world_seed").get<int64_t>();
        tr.task.kind = task_kind_from_name(j.at("task").at("kind").get<std::string>());
        tr.task.budget_steps = j.at("task").at("budget_steps").get<int>();
        tr.task.tool_mode = tool_mode_from_name(j.at("task").at("tool_mode").get<std::string>());
        tr.source_stage = j.at("source_stage").get<std::string>();
        tr.success = j.at("success").get<bool>();
        for (const auto& tj : j.at("turns")) tr.turns.push_back(turn_from_json(tj));
        return tr;
    } catch (const ordered_json::exception& e) {
        throw DataError(std::string("trajectory schema violation: ") + e.what());
    }
}

// Validates that every token id in the trajectory is inside the layout, that
// frame fields are properly delimited image runs, and spans partition.
inline void validate_trajectory(const Trajectory& tr, const Tokenizer& tok) {
    const TokenLayout& L = tok.layout;
    auto check_frame = [&](const std::vector<int32_t>& f, const char* what) {
        if (f.size() != 18) throw DataError(std::string(what) + ": frame run must be 18 tokens");
        if (f.front() != TokenLayout::kImgOpen || f.back() != TokenLayout::kImgClose)
            throw DataError(std::string(what) + ": missing image delimiters");
        for (size_t i = 1; i + 1 < f.size(); ++i)
            if (!L.is_image(f[i])) throw DataError(std::string(what) + ": non-image id inside delimiters");
    };
    if (tr.source_stage.size() != 2 || tr.source_stage[0] != 's' ||
        tr.source_stage[1] < '0' || tr.source_stage[1] > '4')
        throw DataError("unknown source stage: " + tr.source_stage);
    for (const Turn& t : tr.turns) {
        check_frame(t.obs_tokens, "obs");
        check_frame(t.pred_frame_tokens, "pred_frame");
        for (const auto* v : {&t.task_tokens, &t.prev_action_tokens, &t.reasoning_tokens, &t.action_tokens})
            for (int32_t id : *v)
                if (!L.is_text(id)) throw DataError("non-text id in word field");
        // spans partition check
        auto spans = mask_spans(t);
        int expect = 0;
        for (const auto& sp : spans) {
            if (sp[0] != expect) throw DataError("mask spans do not partition AGT segment");
            expect = sp[1];
        }
        if (expect != t.agt_len()) throw DataError("mask spans do not cover AGT segment");
    }
}

// Wraps 16 image ids with delimiters.
inline std::vector<int32_t> delimited_frame(const std::vector<int32_t>& image_ids) {
    if (image_ids.size() != 16) throw DataError("expected 16 image ids");
    std::vector<int32_t> out;
    out.reserve(18);
    out.push_back(TokenLayout::kImgOpen);
    out.insert(out.end(), image_ids.begin(), image_ids.end());
    out.push_back(TokenLayout::kImgClose);
    return out;
}

inline std::vector<int32_t> task_token_ids(const Tokenizer& tok, const TaskSpec& task) {
    std::vector<std::string> w;
    switch (task.kind) {
        case TaskKind::CollectWood: w = {"collect", "wood"}; break;
        case TaskKind::CollectGrass: w = {"collect", "grass"}; break;
        case TaskKind::CollectDirt: w = {"collect", "dirt"}; break;
        case TaskKind::Dig: w = {"dig"}; break;
        case TaskKind::Explore: w = {"explore"}; break;
        case TaskKind::Tower: w = {"build", "tower"}; break;
    }
    w.push_back(task.tool_mode == ToolMode::Manual ? "manual" : "tool");
    return tok.word_ids(w);
}

// ---------------------------------------------------------------------------
// Grammar-constrained sampling
// ---------------------------------------------------------------------------

struct SampleLimits {
    int max_reason = 32;
    int max_action = 10;
};

// Precomputed legal-id sets for each grammar state.
struct TurnGrammar {
    traj_detail::StructIds ids;
    std::vector<int32_t> reason_legal;  // any text token; "Next" exits
    std::vector<int32_t> action_legal;  // action words/camera/none; "next" exits
    std::vector<int32_t> image_legal;   // registered image codes
    SampleLimits limits;

    explicit TurnGrammar(const Tokenizer& tok, SampleLimits lim = {}) : ids(tok), limits(lim) {
        const TokenLayout& L = tok.layout;
        for (int i = 0; i < L.text_count; ++i) reason_legal.push_back(L.text_base() + i);
        static const char* kActionWords[] = {"forward", "back", "left",  "right", "jump",
                                             "attack",  "place", "sprint", "none"};
        for (const char* w : kActionWords) action_legal.push_back(tok.word_id(w));
        for (const char* axis : {"cam_p:", "cam_y:"})
            for (int v = -45; v <= 45; v += 5) action_legal.push_back(tok.word_id(camera_token(axis, v)));
        action_legal.push_back(ids.next_);  // exit token
        for (int i = 0; i < L.image_count; ++i) image_legal.push_back(L.image_base() + i);
    }
};

struct TurnSample {
    std::vector<int32_t> reasoning, action, pred_frame;  // pred_frame delimited (18)
};

// Samples the AGT side of one turn.  Structural tokens are forced (fed but
// not sampled); segment caps force the exit token, so every sampled turn is
// grammatically valid by construction.  The caller must have fed the HUM side
// already.  Temperature 0 is greedy argmax with lowest-id tie-breaking.
inline TurnSample sample_turn(Decoder& dec, const TurnGrammar& g, double temp, Rng& rng) {
    TurnSample out;
    const double* lg = nullptr;
    auto feed = [&](int32_t id) { lg = dec.append(id); };
    feed(TokenLayout::kAgt);
    feed(g.ids.the_);
    feed(g.ids.reasoning_);
    feed(g.ids.colon_);
    for (int i = 0; i < g.limits.max_reason; ++i) {
        int32_t id = sample_legal(lg, g.reason_legal, temp, rng);
        if (id == g.ids.next_cap_) break;
        out.reasoning.push_back(id);
        feed(id);
    }
    feed(g.ids.next_cap_);
    feed(g.ids.action_);
    feed(g.ids.colon_);
    for (int i = 0; i < g.limits.max_action; ++i) {
        int32_t id = sample_legal(lg, g.action_legal, temp, rng);
        if (id == g.ids.next_) break;
        out.action.push_back(id);
        feed(id);
    }
    feed(g.ids.next_);
    feed(g.ids.frame_);
    feed(g.ids.colon_);
    feed(TokenLayout::kImgOpen);
    out.pred_frame.push_back(TokenLayout::kImgOpen);
    for (int i = 0; i < 16; ++i) {
        int32_t id = sample_legal(lg, g.image_legal, temp, rng);
        out.pred_frame.push_back(id);
        feed(id);
    }
    feed(TokenLayout::kImgClose);
    out.pred_frame.push_back(TokenLayout::kImgClose);
    return out;
}

// Exact contiguous-subsequence search for the 5-token re-observe trigger.
inline bool contains_trigger(const std::vector<int32_t>& reasoning, const Tokenizer& tok) {
    traj_detail::StructIds s(tok);
    std::vector<int32_t> trig = s.trigger();
    if (reasoning.size() < trig.size()) return false;
    for (size_t i = 0; i + trig.size() <= reasoning.size(); ++i) {
        bool hit = true;
        for (size_t j = 0; j < trig.size(); ++j)
            if (reasoning[i + j] != trig[j]) {
                hit = false;
                break;
            }
        if (hit) return true;
    }
    return false;
}

}  // namespace rig
