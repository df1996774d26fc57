#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rig/minegrid.hpp"
#include "rig/oracles.hpp"
#include "rig/seqmodel.hpp"
#include "rig/tokenizer.hpp"
#include "rig/trajectory.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Decoder context with whole-turn FIFO eviction
// ---------------------------------------------------------------------------

// Keeps the KV-cache decoder plus the token chunks it was fed (BOS first,
// then one chunk per committed turn).  When a new turn would overflow the
// model context, the oldest turns are dropped and the decoder replays the
// remaining chunks from position 0 — positions always count from the start
// of the retained window, mirroring how training rows are positioned from
// the start of a trajectory segment.
class TurnContext {
public:
    explicit TurnContext(const Params& p) : params_(p) {
        dec_.emplace(p);
        chunks_.push_back({TokenLayout::kBos});
        feed_tokens(chunks_.back());
    }

    Decoder& decoder() { return *dec_; }
    const Decoder& decoder() const { return *dec_; }
    int len() const { return dec_->len(); }

    // Makes room for `needed` more tokens, evicting oldest turns as required.
    // Throws ConfigError if even an empty context cannot host the turn.
    void ensure_room(int needed) {
        const int cap = params_.cfg().context_len;
        if (1 + needed > cap)
            throw ConfigError("model context too small for a single turn (" + std::to_string(needed) +
                              " tokens needed)");
        while (dec_->len() + pending_ + needed > cap) {
            if (chunks_.size() <= 1) throw ConfigError("turn context underflow during eviction");
            chunks_.erase(chunks_.begin() + 1);
            rebuild();
        }
    }

    // Streams tokens for the turn being built (HUM side before sampling).
    const double* feed(const std::vector<int32_t>& toks) {
        const double* lg = nullptr;
        for (int32_t t : toks) lg = dec_->append(t);
        pending_ += static_cast<int>(toks.size());
        return lg;
    }

    // Registers the finished turn's full token list for future eviction.
    // `sampled_len` counts tokens that sample_turn already appended itself.
    void commit_turn(std::vector<int32_t> full_turn, int sampled_len) {
        pending_ += sampled_len;
        if (pending_ != static_cast<int>(full_turn.size()))
            throw Error("turn bookkeeping out of sync");
        pending_ = 0;
        chunks_.push_back(std::move(full_turn));
    }

private:
    void rebuild() {
        dec_.emplace(params_);
        for (const auto& ch : chunks_)
            for (int32_t t : ch) dec_->append(t);
    }

    void feed_tokens(const std::vector<int32_t>& toks) {
        for (int32_t t : toks) dec_->append(t);
    }

    const Params& params_;
    std::optional<Decoder> dec_;
    std::vector<std::vector<int32_t>> chunks_;
    int pending_ = 0;
};

// ---------------------------------------------------------------------------
// Episode records
// ---------------------------------------------------------------------------

struct AgentOptions {
    double temperature = 0.0;
    uint64_t sample_seed = 0;
    SampleLimits limits;
    int lookahead = 0;   // dreamed turns per real step; 0 = reactive mode
    int max_steps = -1;  // cap on real steps; -1 = task budget only
};

struct StepRecord {
    Turn turn;                 // the committed turn (real obs, sampled AGT side)
    std::vector<Turn> dreams;  // imagined turns preceding the decision
    ActionCommand action;
    bool revised = false;      // re-observe trigger fired; corrective action used
};

struct EpisodeRecord {
    int64_t world_seed = 0;
    TaskSpec task;
    int lookahead = 0;
    MetricValue final_metric;
    int64_t steps = 0;
    int64_t env_accesses = 0;
    int64_t dream_env_accesses = 0;  // env accesses while dreaming; guard keeps this 0
    std::vector<StepRecord> records;
};

namespace agent_detail {

// Worst-case token count of one turn under the sampling limits.
inline int turn_budget(const Tokenizer& tok, const TaskSpec& task, const SampleLimits& lim) {
    // HUM: [IMAGINE] HUM obs(18) task prev(<=10); AGT: 28 + caps.
    int hum = 2 + 18 + static_cast<int>(task_token_ids(tok, task).size()) + 10;
    int agt = 28 + lim.max_reason + lim.max_action;
    return hum + agt;
}

inline std::vector<int32_t> canonical_action_ids(const Tokenizer& tok, const ActionCommand& a) {
    return tok.word_ids(action_words(a));
}

inline Turn make_turn(bool imagined, std::vector<int32_t> obs, std::vector<int32_t> task_ids,
                      std::vector<int32_t> prev, const TurnSample& ts) {
    Turn t;
    t.imagined = imagined;
    t.obs_tokens = std::move(obs);
    t.task_tokens = std::move(task_ids);
    t.prev_action_tokens = std::move(prev);
    t.reasoning_tokens = ts.reasoning;
    t.action_tokens = ts.action;
    t.pred_frame_tokens = ts.pred_frame;
    return t;
}

}  // namespace agent_detail

// ---------------------------------------------------------------------------
// Dream rollouts
// ---------------------------------------------------------------------------

// Unrolls `n` imagined turns on the decoder: the first observes `obs_tokens`
// (a real frame), each later turn observes the previous turn's predicted
// frame.  The environment is never consulted — everything after the seed
// observation is model imagination.
inline std::vector<Turn> dream_rollout(Decoder& dec, const Tokenizer& tok, const TurnGrammar& g,
                                       std::vector<int32_t> obs_tokens,
                                       const std::vector<int32_t>& task_ids,
                                       std::vector<int32_t> prev_action, int n, double temp, Rng& rng) {
    std::vector<Turn> dreams;
    for (int k = 0; k < n; ++k) {
        std::vector<int32_t> hum;
        hum.push_back(TokenLayout::kImagine);
        hum.push_back(TokenLayout::kHum);
        hum.insert(hum.end(), obs_tokens.begin(), obs_tokens.end());
        hum.insert(hum.end(), task_ids.begin(), task_ids.end());
        hum.insert(hum.end(), prev_action.begin(), prev_action.end());
        for (int32_t t : hum) dec.append(t);
        TurnSample ts = sample_turn(dec, g, temp, rng);
        Turn t = agent_detail::make_turn(true, obs_tokens, task_ids, prev_action, ts);
        obs_tokens = ts.pred_frame;  // feed imagination back as the next observation
        prev_action = agent_detail::canonical_action_ids(tok, action_from_words(tok.words(ts.action)));
        dreams.push_back(std::move(t));
    }
    return dreams;
}

// ---------------------------------------------------------------------------
// Policy loops
// ---------------------------------------------------------------------------

// Reactive loop: observe, sample one turn, execute its action.
inline EpisodeRecord run_basic(const Params& params, const Tokenizer& tok, Env& env,
                               const AgentOptions& opts) {
    TurnContext ctx(params);
    TurnGrammar grammar(tok, opts.limits);
    Rng rng(split(opts.sample_seed, "agent"));
    const std::vector<int32_t> task_ids = task_token_ids(tok, env.task());
    const int budget = agent_detail::turn_budget(tok, env.task(), opts.limits);

    EpisodeRecord ep;
    ep.world_seed = env.state().seed;
    ep.task = env.task();
    ep.lookahead = 0;
    const int64_t access0 = env.access_count() - 1;  // state() above counted once

    std::vector<int32_t> prev = tok.word_ids({"none"});
    int64_t cap = opts.max_steps < 0 ? std::numeric_limits<int64_t>::max() : opts.max_steps;
    while (env.budget_left() && ep.steps < cap) {
        Frame frame = env.render();
        std::vector<int32_t> obs = delimited_frame(tok.encode_frame(frame));
        std::vector<int32_t> hum;
        hum.push_back(TokenLayout::kHum);
        hum.insert(hum.end(), obs.begin(), obs.end());
        hum.insert(hum.end(), task_ids.begin(), task_ids.end());
        hum.insert(hum.end(), prev.begin(), prev.end());

        ctx.ensure_room(budget);
        ctx.feed(hum);
        TurnSample ts = sample_turn(ctx.decoder(), grammar, opts.temperature, rng);
        Turn turn = agent_detail::make_turn(false, obs, task_ids, prev, ts);
        std::vector<int32_t> full = hum;
        std::vector<int32_t> agt = agt_tokens(turn, tok);
        full.insert(full.end(), agt.begin(), agt.end());
        ctx.commit_turn(std::move(full), static_cast<int>(agt.size()));

        ActionCommand act = action_from_words(tok.words(ts.action));
        env.step(act);
        ep.records.push_back({std::move(turn), {}, act, false});
        prev = agent_detail::canonical_action_ids(tok, act);
        ep.steps += 1;
        if (env.metric().success) break;
    }
    ep.final_metric = env.metric();
    ep.env_accesses = env.access_count() - access0;
    return ep;
}

// Lookahead loop: before each real action, dream `n` turns on a scratch
// copy of the context, then sample a review turn that re-observes the real
// frame with the dreams still in view.  If the review's rationale contains
// the exact re-observe trigger, its corrective action is executed; otherwise
// the first dreamed action is.  Only the review turn (real observation) is
// kept in the persistent context, so long-horizon history stays grounded.
inline EpisodeRecord run_lookahead(const Params& params, const Tokenizer& tok, Env& env, int n,
                                   const AgentOptions& opts_in) {
    if (n <= 0) {
        EpisodeRecord ep = run_basic(params, tok, env, opts_in);
        ep.lookahead = 0;
        return ep;
    }
    AgentOptions opts = opts_in;
    opts.lookahead = n;

    TurnContext ctx(params);
    TurnGrammar grammar(tok, opts.limits);
    Rng rng(split(opts.sample_seed, "agent"));
    const std::vector<int32_t> task_ids = task_token_ids(tok, env.task());
    const int budget = agent_detail::turn_budget(tok, env.task(), opts.limits);

    EpisodeRecord ep;
    ep.world_seed = env.state().seed;
    ep.task = env.task();
    ep.lookahead = n;
    const int64_t access0 = env.access_count() - 1;

    std::vector<int32_t> prev = tok.word_ids({"none"});
    int64_t cap = opts.max_steps < 0 ? std::numeric_limits<int64_t>::max() : opts.max_steps;
    while (env.budget_left() && ep.steps < cap) {
        Frame frame = env.render();
        std::vector<int32_t> obs = delimited_frame(tok.encode_frame(frame));

        // Room for the dreams + review on the scratch copy, and for the
        // review turn alone on the persistent context.
        ctx.ensure_room((n + 1) * budget);

        int64_t dream_access_before = env.access_count();
        env.begin_dream();
        Decoder scratch(ctx.decoder());
        std::vector<Turn> dreams =
            dream_rollout(scratch, tok, grammar, obs, task_ids, prev, n, opts.temperature, rng);
        env.end_dream();
        ep.dream_env_accesses += env.access_count() - dream_access_before;

        // Review turn, conditioned on the dreams (scratch decoder).
        std::vector<int32_t> hum;
        hum.push_back(TokenLayout::kHum);
        hum.insert(hum.end(), obs.begin(), obs.end());
        hum.insert(hum.end(), task_ids.begin(), task_ids.end());
        hum.insert(hum.end(), prev.begin(), prev.end());
        for (int32_t t : hum) scratch.append(t);
        TurnSample review = sample_turn(scratch, grammar, opts.temperature, rng);
        Turn turn = agent_detail::make_turn(false, obs, task_ids, prev, review);

        bool revised = contains_trigger(review.reasoning, tok);
        ActionCommand act = revised ? action_from_words(tok.words(review.action))
                                    : action_from_words(tok.words(dreams.front().action_tokens));

        // Persist only the review turn (replayed verbatim) in the real context.
        ctx.feed(hum);
        std::vector<int32_t> agt = agt_tokens(turn, tok);
        ctx.feed(agt);
        std::vector<int32_t> full = hum;
        full.insert(full.end(), agt.begin(), agt.end());
        ctx.commit_turn(std::move(full), 0);

        env.step(act);
        ep.records.push_back({std::move(turn), std::move(dreams), act, revised});
        prev = agent_detail::canonical_action_ids(tok, act);
        ep.steps += 1;
        if (env.metric().success) break;
    }
    ep.final_metric = env.metric();
    ep.env_accesses = env.access_count() - access0;
    return ep;
}

// Expert reference rollout under the same episode accounting.
inline EpisodeRecord run_expert_episode(Env& env, int64_t max_steps = -1) {
    EpisodeRecord ep;
    ep.world_seed = env.state().seed;
    ep.task = env.task();
    int64_t cap = max_steps < 0 ? std::numeric_limits<int64_t>::max() : max_steps;
    while (env.budget_left() && ep.steps < cap) {
        ExpertDecision d = Expert::decide(env.state(), env.task());
        if (d.exhausted) break;
        env.step(d.action);
        ep.records.push_back({{}, {}, d.action, false});
        ep.steps += 1;
        if (env.metric().success) break;
    }
    ep.final_metric = env.metric();
    return ep;
}

}  // namespace rig
