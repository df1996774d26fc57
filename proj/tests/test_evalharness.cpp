#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "rig/evalharness.hpp"

using namespace rig;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const Tokenizer& shared_tok() {
    static const Tokenizer tok = default_tokenizer();
    return tok;
}

ModelConfig agent_cfg(int ctx = 512) {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.context_len = ctx;
    c.vocab = shared_tok().layout.vocab_size();
    c.init_std = 0.05;
    c.init_seed = 99;
    return c;
}

Params agent_params(int ctx = 512) {
    Params p(agent_cfg(ctx));
    p.init_gaussian();
    return p;
}

Params zero_params(int ctx = 512) {
    ModelConfig c = agent_cfg(ctx);
    c.init_std = 0.0;
    Params p(c);
    p.init_gaussian();
    return p;
}

// A model whose next-token argmax follows `chain` exactly: all weights are
// zero except tok_emb, so logits depend only on the last input token, and
// each chain link gets a private slot pair whose "incoming" magnitude grows
// 4x per hop so the successor always beats self-similarity.
Params chain_params(const std::vector<std::string>& chain, int ctx = 512) {
    const Tokenizer& tok = shared_tok();
    ModelConfig c = agent_cfg(ctx);
    c.init_std = 0.0;
    Params p(c);
    p.init_gaussian();
    double* te = p.tok_emb();
    const int d = c.d_model;
    std::vector<int32_t> ids = tok.word_ids(chain);
    REQUIRE(2 * (ids.size() - 1) <= static_cast<size_t>(d));
    for (size_t k = 0; k + 1 < ids.size(); ++k) {
        const double out_mag = std::pow(4.0, static_cast<double>(k));
        const double in_mag = 4.0 * out_mag;
        const size_t slot = 2 * k;
        te[static_cast<size_t>(ids[k]) * d + slot] += out_mag;
        te[static_cast<size_t>(ids[k]) * d + slot + 1] -= out_mag;
        te[static_cast<size_t>(ids[k + 1]) * d + slot] += in_mag;
        te[static_cast<size_t>(ids[k + 1]) * d + slot + 1] -= in_mag;
    }
    return p;
}

// Greedy policy that always walks forward (rationale fills to its cap).
Params forward_params(int ctx = 512) { return chain_params({":", "forward", "next"}, ctx); }

// Greedy policy whose sampled rationale is exactly the re-observe trigger.
Params trigger_params() {
    return chain_params({":", "Wait", "!", "Let's", "re-observe", "...", "Next"});
}

// Greedy policy whose rationale is a well-formed "no target" claim.
Params no_target_params() {
    return chain_params({":", "no", "target", "visible", ";", "waiting", "Next"});
}

TaskSpec collect_spec(int budget, ToolMode tool = ToolMode::Manual) {
    TaskSpec s;
    s.kind = TaskKind::CollectWood;
    s.tool_mode = tool;
    s.budget_steps = budget;
    return s;
}

StageOptions small_opts() {
    StageOptions o;
    o.world_size = 12;
    o.seed_start = 1000;
    o.s0_count = 3;
    o.s1_count = 5;
    o.s2_count = 3;
    o.s3_count = 2;
    o.s4_count = 2;
    o.s4_depth = 2;
    return o;
}

std::vector<int32_t> flat_image_run(const Tokenizer& tok, int offset = 0) {
    return std::vector<int32_t>(16, tok.layout.image_base() + offset);
}

// Synthetic turn with uniform frames; reasoning words are real vocab words so
// the trajectory validates and serializes.
Turn synth_turn(const Tokenizer& tok, int y, int pred_offset = 0) {
    Turn t;
    t.obs_tokens = delimited_frame(flat_image_run(tok, 0));
    t.pred_frame_tokens = delimited_frame(flat_image_run(tok, pred_offset));
    t.task_tokens = tok.word_ids({"collect", "wood", "manual"});
    t.prev_action_tokens = tok.word_ids({"none"});
    t.reasoning_tokens.assign(y, tok.word_id("ahead"));
    t.action_tokens = tok.word_ids({"jump"});
    return t;
}

Trajectory synth_traj(const Tokenizer& tok, const std::string& name, int64_t id, int nturns, int y,
                      int pred_offset = 0) {
    Trajectory tr;
    tr.name = name;
    tr.id = id;
    tr.world_seed = id;
    tr.task = collect_spec(8);
    tr.source_stage = "s1";
    tr.success = true;
    for (int i = 0; i < nturns; ++i) tr.turns.push_back(synth_turn(tok, y, pred_offset));
    return tr;
}

// Bare hand-built world: uniform fill, agent mid-grid facing north.
WorldState bare_world(TileKind fill = TileKind::Stone, int size = 9) {
    WorldState st;
    st.size = size;
    st.grid.assign(static_cast<size_t>(size) * size, fill);
    st.agent_row = 4;
    st.agent_col = 4;
    st.yaw_deg = 0;
    st.pitch_deg = 0;
    return st;
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::string episode_sig(const EpisodeRecord& ep) {
    std::string s = std::to_string(ep.steps) + "|" + std::to_string(ep.env_accesses) + "|" +
                    std::to_string(ep.final_metric.success) + "|";
    for (const StepRecord& r : ep.records) {
        for (const std::string& w : action_words(r.action)) s += w + " ";
        s += "|" + turn_to_json(r.turn).dump() + "|" + std::to_string(r.revised) + "|";
        for (const Turn& d : r.dreams) s += turn_to_json(d).dump() + "|";
    }
    return s;
}

std::string golden_path() { return std::string(RIG_TEST_DATA_DIR) + "/golden_s2.jsonl"; }

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("rig-eval-tests-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Embodied statistics
// ---------------------------------------------------------------------------

TEST_CASE("finalize stats computes sample moments and success rate", "[evalharness]") {
    SECTION("four values, hand-computed") {
        EmbodiedStats s;
        s.values = {1.0, 2.0, 3.0, 4.0};
        s.successes = {true, false, true, true};
        finalize_stats(s);
        CHECK(s.n == 4);
        CHECK(s.mean == 2.5);
        // ss = 2.25 + 0.25 + 0.25 + 2.25 = 5 exactly, so these are bitwise.
        CHECK(s.stdev == std::sqrt(5.0 / 3.0));
        CHECK(s.sem == std::sqrt(5.0 / 3.0) / 2.0);
        CHECK(s.success_rate == 0.75);
    }

    SECTION("single value has zero spread") {
        EmbodiedStats s;
        s.values = {7.0};
        s.successes = {true};
        finalize_stats(s);
        CHECK(s.n == 1);
        CHECK(s.mean == 7.0);
        CHECK(s.stdev == 0.0);
        CHECK(s.sem == 0.0);
        CHECK(s.success_rate == 1.0);
    }

    SECTION("empty input is a no-op") {
        EmbodiedStats s;
        finalize_stats(s);
        CHECK(s.n == 0);
        CHECK(s.mean == 0.0);
        CHECK(s.success_rate == 0.0);
    }
}

TEST_CASE("embodied evaluation aggregates one episode per shared seed", "[evalharness]") {
    std::vector<int64_t> seen;
    auto runner = [&](int64_t seed) {
        seen.push_back(seed);
        EpisodeRecord ep;
        ep.world_seed = seed;
        ep.final_metric.value = static_cast<double>(seed);
        ep.final_metric.success = (seed % 2) == 0;
        ep.env_accesses = 7;
        ep.dream_env_accesses = 3;
        return ep;
    };
    EmbodiedStats s = eval_embodied(runner, 100, 4);

    CHECK(seen == std::vector<int64_t>({100, 101, 102, 103}));
    CHECK(s.values == std::vector<double>({100.0, 101.0, 102.0, 103.0}));
    CHECK(s.successes == std::vector<bool>({true, false, true, false}));
    CHECK(s.n == 4);
    CHECK(s.mean == 101.5);
    CHECK(s.success_rate == 0.5);
    CHECK(s.env_accesses == 28);
    CHECK(s.dream_env_accesses == 12);
}

TEST_CASE("paired margin differences per seed", "[evalharness]") {
    EmbodiedStats a, b;
    a.values = {3.0, 5.0, 7.0};
    b.values = {1.0, 2.0, 3.0};

    PairedMargin m = paired_margin(a, b);
    CHECK(m.n == 3);
    CHECK(m.mean_diff == 3.0);  // diffs {2,3,4}
    CHECK(m.sem_diff == 1.0 / std::sqrt(3.0));

    SECTION("single pair has zero sem") {
        EmbodiedStats c, d;
        c.values = {4.0};
        d.values = {1.5};
        PairedMargin one = paired_margin(c, d);
        CHECK(one.n == 1);
        CHECK(one.mean_diff == 2.5);
        CHECK(one.sem_diff == 0.0);
    }

    SECTION("mismatched or empty runs are rejected") {
        EmbodiedStats c;
        c.values = {1.0};
        CHECK_THROWS_AS(paired_margin(a, c), DataError);
        CHECK_THROWS_WITH(paired_margin(a, c),
                          "paired margin requires equal, nonempty shared-seed runs");
        EmbodiedStats e1, e2;
        CHECK_THROWS_AS(paired_margin(e1, e2), DataError);
    }
}

// ---------------------------------------------------------------------------
// Reasoning parser
// ---------------------------------------------------------------------------

TEST_CASE("parse reasoning accepts the two scripted forms", "[evalharness]") {
    SECTION("entity claim") {
        ParsedReasoning p =
            parse_reasoning({"a", "Tree", "is", "1", "tiles", "ahead", ";", "turning", "left"});
        REQUIRE(p.well_formed);
        CHECK_FALSE(p.no_target);
        CHECK(p.entity == "Tree");
        CHECK(p.k == 1);
        CHECK(p.direction == "ahead");
        CHECK(p.phrase == std::vector<std::string>({"turning", "left"}));
    }

    SECTION("no-target claim") {
        ParsedReasoning p = parse_reasoning({"no", "target", "visible", ";", "waiting"});
        REQUIRE(p.well_formed);
        CHECK(p.no_target);
        CHECK(p.phrase == std::vector<std::string>({"waiting"}));
    }

    SECTION("empty phrase is allowed by the grammar") {
        ParsedReasoning p = parse_reasoning({"no", "target", "visible", ";"});
        CHECK(p.well_formed);
        CHECK(p.phrase.empty());
    }

    SECTION("digit bounds") {
        CHECK(parse_reasoning({"a", "Pit", "is", "0", "tiles", "left", ";", "waiting"}).k == 0);
        CHECK(parse_reasoning({"a", "Pit", "is", "9", "tiles", "left", ";", "waiting"}).k == 9);
    }

    SECTION("all six entity words are recognized") {
        for (std::string e : {"Tree", "Grass", "Dirt", "Stone", "Pit", "Block"})
            CHECK(parse_reasoning({"a", e, "is", "2", "tiles", "right", ";", "waiting"}).well_formed);
    }
}

TEST_CASE("parse reasoning strips quoted context through the last trigger", "[evalharness]") {
    const std::vector<std::string> trig = trigger_phrase();
    const std::vector<std::string> claim = {"a", "Grass", "is", "2", "tiles", "right", ";",
                                            "moving", "forward"};

    SECTION("trigger prefix") {
        ParsedReasoning p = parse_reasoning(trig + claim);
        REQUIRE(p.well_formed);
        CHECK(p.entity == "Grass");
        CHECK(p.k == 2);
    }

    SECTION("junk before the trigger is discarded too") {
        ParsedReasoning p = parse_reasoning(std::vector<std::string>{"jump", "jump"} + trig + claim);
        REQUIRE(p.well_formed);
        CHECK(p.direction == "right");
    }

    SECTION("only the text after the last trigger is parsed") {
        std::vector<std::string> first = {"a", "Tree", "is", "1", "tiles", "ahead", ";", "waiting"};
        ParsedReasoning p = parse_reasoning(first + trig + claim);
        REQUIRE(p.well_formed);
        CHECK(p.entity == "Grass");
        CHECK(p.phrase == std::vector<std::string>({"moving", "forward"}));
    }

    SECTION("a bare trigger leaves nothing to parse") {
        CHECK_FALSE(parse_reasoning(trig).well_formed);
    }
}

TEST_CASE("parse reasoning rejects malformed rationales", "[evalharness]") {
    CHECK_FALSE(parse_reasoning({}).well_formed);
    CHECK_FALSE(parse_reasoning({"waiting"}).well_formed);
    // Two-digit distances are outside the grammar.
    CHECK_FALSE(parse_reasoning({"a", "Tree", "is", "12", "tiles", "ahead", ";", "x"}).well_formed);
    // Unknown entity.
    CHECK_FALSE(parse_reasoning({"a", "Cow", "is", "1", "tiles", "ahead", ";", "x"}).well_formed);
    // Wrong keywords.
    CHECK_FALSE(parse_reasoning({"a", "Tree", "is", "1", "tile", "ahead", ";", "x"}).well_formed);
    CHECK_FALSE(parse_reasoning({"a", "Tree", "is", "1", "tiles", "ahead", "turning"}).well_formed);
    CHECK_FALSE(parse_reasoning({"no", "target", "visible", "waiting"}).well_formed);
    CHECK_FALSE(parse_reasoning({"no", "target", ";", "waiting"}).well_formed);
}

// ---------------------------------------------------------------------------
// Egocentric geometry re-derivation
// ---------------------------------------------------------------------------

TEST_CASE("facing basis quantizes yaw to quarter turns, clockwise ties", "[evalharness]") {
    auto basis = [](int yaw) {
        int fr, fc, rr, rc;
        eval_detail::facing_basis(yaw, fr, fc, rr, rc);
        return std::array<int, 4>{fr, fc, rr, rc};
    };
    const std::array<int, 4> north{-1, 0, 0, 1}, east{0, 1, 1, 0}, south{1, 0, 0, -1},
        west{0, -1, -1, 0};

    CHECK(basis(0) == north);
    CHECK(basis(40) == north);
    CHECK(basis(45) == east);  // midpoint rounds clockwise
    CHECK(basis(90) == east);
    CHECK(basis(130) == east);
    CHECK(basis(135) == south);
    CHECK(basis(180) == south);
    CHECK(basis(225) == west);
    CHECK(basis(270) == west);
    CHECK(basis(315) == north);
    CHECK(basis(355) == north);
}

TEST_CASE("find nearest scans the forward window with chebyshev tie-breaks", "[evalharness]") {
    WorldState st = bare_world();

    SECTION("empty window") {
        CHECK_FALSE(eval_detail::find_nearest(st, TileKind::Tree).has_value());
    }

    SECTION("single sighting straight ahead") {
        st.set_tile(2, 4, TileKind::Tree);  // ahead 2, lateral 0
        auto hit = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(hit.has_value());
        CHECK(hit->cheb == 2);
        CHECK(hit->ahead == 2);
        CHECK(hit->lat == 0);
        CHECK(hit->row == 2);
        CHECK(hit->col == 4);
    }

    SECTION("closer sighting wins") {
        st.set_tile(2, 4, TileKind::Tree);
        st.set_tile(3, 3, TileKind::Tree);  // ahead 1, lateral -1, cheb 1
        auto hit = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(hit.has_value());
        CHECK(hit->cheb == 1);
        CHECK(hit->row == 3);
        CHECK(hit->col == 3);
    }

    SECTION("equal distance resolves by world row then column") {
        st.set_tile(4, 3, TileKind::Tree);  // ahead 0, lateral -1
        st.set_tile(3, 5, TileKind::Tree);  // ahead 1, lateral +1
        auto hit = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(hit.has_value());
        CHECK(hit->cheb == 1);
        CHECK(hit->row == 3);
        CHECK(hit->col == 5);
        CHECK(eval_detail::sector_of(hit->ahead, hit->lat) == "ahead");
    }

    SECTION("the agent's own cell is excluded") {
        st.set_tile(4, 4, TileKind::Tree);
        CHECK_FALSE(eval_detail::find_nearest(st, TileKind::Tree).has_value());
    }

    SECTION("one row behind is visible, two are not") {
        st.set_tile(5, 4, TileKind::Tree);  // ahead -1
        auto hit = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(hit.has_value());
        CHECK(hit->ahead == -1);
        CHECK(eval_detail::sector_of(hit->ahead, hit->lat) == "behind");

        st.set_tile(5, 4, TileKind::Stone);
        st.set_tile(6, 4, TileKind::Tree);  // ahead -2: outside the window
        CHECK_FALSE(eval_detail::find_nearest(st, TileKind::Tree).has_value());
    }

    SECTION("lateral window is three tiles wide") {
        st.set_tile(4, 8, TileKind::Tree);  // lateral +4: outside
        CHECK_FALSE(eval_detail::find_nearest(st, TileKind::Tree).has_value());
        st.set_tile(4, 7, TileKind::Tree);  // lateral +3: inside
        auto hit = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(hit.has_value());
        CHECK(hit->lat == 3);
    }

    SECTION("window rotates with the facing") {
        st.set_tile(4, 6, TileKind::Tree);
        st.yaw_deg = 90;  // east: two tiles ahead
        auto e = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(e.has_value());
        CHECK(e->ahead == 2);
        CHECK(e->lat == 0);

        st.yaw_deg = 180;  // south: east is now to the left
        auto s = eval_detail::find_nearest(st, TileKind::Tree);
        REQUIRE(s.has_value());
        CHECK(s->ahead == 0);
        CHECK(s->lat == -2);
        CHECK(eval_detail::sector_of(s->ahead, s->lat) == "left");
    }

    SECTION("window clips at the world edge without faulting") {
        st.agent_row = 0;
        st.agent_col = 0;
        CHECK_FALSE(eval_detail::find_nearest(st, TileKind::Tree).has_value());
    }
}

TEST_CASE("sector assignment prefers ahead and behind on ties", "[evalharness]") {
    using eval_detail::sector_of;
    CHECK(sector_of(1, 0) == "ahead");
    CHECK(sector_of(2, 2) == "ahead");
    CHECK(sector_of(2, -2) == "ahead");
    CHECK(sector_of(-1, 0) == "behind");
    CHECK(sector_of(-2, 2) == "behind");
    CHECK(sector_of(0, 1) == "right");
    CHECK(sector_of(1, 2) == "right");
    CHECK(sector_of(0, -1) == "left");
    CHECK(sector_of(1, -2) == "left");
    CHECK(sector_of(-1, -2) == "left");
}

TEST_CASE("expected action phrase follows the command precedence", "[evalharness]") {
    using eval_detail::expected_phrase;
    using V = std::vector<std::string>;
    WorldState st = bare_world();
    ActionCommand a;

    SECTION("building up outranks everything") {
        st.pitch_deg = 40;
        a.place = a.jump = a.attack = true;
        a.cam_pitch_delta = 5;  // pitch lands exactly on 45
        CHECK(expected_phrase(st, a) == V({"building", "up"}));
    }

    SECTION("steep attack digs, shallow attack attacks") {
        a.attack = true;
        st.pitch_deg = 45;
        CHECK(expected_phrase(st, a) == V({"digging", "down"}));
        st.pitch_deg = 0;
        CHECK(expected_phrase(st, a) == V({"attacking", "it"}));
        a.cam_yaw_delta = 15;  // attack still wins over turning
        CHECK(expected_phrase(st, a) == V({"attacking", "it"}));
    }

    SECTION("camera deltas quantize and clamp before naming") {
        a.cam_yaw_delta = 17;
        CHECK(expected_phrase(st, a) == V({"turning", "right"}));
        a.cam_yaw_delta = -17;
        CHECK(expected_phrase(st, a) == V({"turning", "left"}));
        a.cam_yaw_delta = 0;
        a.cam_pitch_delta = 10;
        CHECK(expected_phrase(st, a) == V({"looking", "down"}));
        a.cam_pitch_delta = -60;  // clamps to -45, still "up"
        CHECK(expected_phrase(st, a) == V({"looking", "up"}));
        a.cam_pitch_delta = 2;  // rounds to zero: no camera claim
        a.forward = true;
        CHECK(expected_phrase(st, a) == V({"moving", "forward"}));
    }

    SECTION("movement order and the quiet fallbacks") {
        a.forward = true;
        CHECK(expected_phrase(st, a) == V({"moving", "forward"}));
        a.forward = false;
        a.back = a.left = true;  // back outranks left
        CHECK(expected_phrase(st, a) == V({"stepping", "back"}));
        a.back = false;
        CHECK(expected_phrase(st, a) == V({"stepping", "left"}));
        a.left = false;
        a.right = true;
        CHECK(expected_phrase(st, a) == V({"stepping", "right"}));
        a.right = false;
        a.jump = true;
        CHECK(expected_phrase(st, a) == V({"jumping"}));
        a.jump = false;
        CHECK(expected_phrase(st, a) == V({"waiting"}));
        a.place = true;  // place alone has no phrase of its own
        CHECK(expected_phrase(st, a) == V({"waiting"}));
    }
}

// ---------------------------------------------------------------------------
// Consistency checking against hand-built states
// ---------------------------------------------------------------------------

TEST_CASE("entity claims must match the nearest sighting and the action", "[evalharness]") {
    WorldState st = bare_world();
    st.set_tile(3, 4, TileKind::Tree);  // 1 tile ahead
    TaskSpec task = collect_spec(8);
    ActionCommand attack;
    attack.attack = true;

    const std::vector<std::string> good = {"a",     "Tree", "is",        "1", "tiles",
                                           "ahead", ";",    "attacking", "it"};
    CHECK(reasoning_consistent(st, task, attack, good));

    SECTION("wrong distance, sector, or entity fails") {
        CHECK_FALSE(reasoning_consistent(
            st, task, attack, {"a", "Tree", "is", "2", "tiles", "ahead", ";", "attacking", "it"}));
        CHECK_FALSE(reasoning_consistent(
            st, task, attack, {"a", "Tree", "is", "1", "tiles", "left", ";", "attacking", "it"}));
        CHECK_FALSE(reasoning_consistent(
            st, task, attack, {"a", "Grass", "is", "1", "tiles", "ahead", ";", "attacking", "it"}));
    }

    SECTION("the phrase must describe the executed command") {
        CHECK_FALSE(reasoning_consistent(
            st, task, attack, {"a", "Tree", "is", "1", "tiles", "ahead", ";", "waiting"}));
        ActionCommand fwd;
        fwd.forward = true;
        CHECK_FALSE(reasoning_consistent(st, task, fwd, good));
        CHECK(reasoning_consistent(
            st, task, fwd, {"a", "Tree", "is", "1", "tiles", "ahead", ";", "moving", "forward"}));
    }

    SECTION("a quoted trigger prefix does not change the verdict") {
        CHECK(reasoning_consistent(st, task, attack, trigger_phrase() + good));
    }

    SECTION("garbled or empty reasoning is never consistent") {
        CHECK_FALSE(reasoning_consistent(st, task, attack, {}));
        CHECK_FALSE(reasoning_consistent(st, task, attack, {"attack", "attack", "attack"}));
    }
}

TEST_CASE("below claims require a dig site underfoot", "[evalharness]") {
    WorldState st = bare_world();
    st.pitch_deg = 45;
    TaskSpec task;
    task.kind = TaskKind::Dig;
    ActionCommand dig;
    dig.attack = true;

    const std::vector<std::string> below = {"a",     "Dirt", "is",      "0",   "tiles",
                                            "below", ";",    "digging", "down"};

    SECTION("standing on dirt") {
        st.set_tile(4, 4, TileKind::Dirt);
        CHECK(reasoning_consistent(st, task, dig, below));
    }

    SECTION("already inside a hole counts even on stone") {
        st.agent_z = -1;
        CHECK(reasoning_consistent(st, task, dig, below));
    }

    SECTION("on bare stone at ground level it is a false claim") {
        CHECK_FALSE(reasoning_consistent(st, task, dig, below));
    }

    SECTION("below only accepts Dirt at distance zero") {
        st.set_tile(4, 4, TileKind::Dirt);
        CHECK_FALSE(reasoning_consistent(
            st, task, dig, {"a", "Tree", "is", "0", "tiles", "below", ";", "digging", "down"}));
        CHECK_FALSE(reasoning_consistent(
            st, task, dig, {"a", "Dirt", "is", "1", "tiles", "below", ";", "digging", "down"}));
    }

    SECTION("the phrase gate runs first") {
        st.set_tile(4, 4, TileKind::Dirt);
        st.pitch_deg = 0;  // shallow pitch: the same command reads "attacking it"
        CHECK_FALSE(reasoning_consistent(st, task, dig, below));
    }
}

TEST_CASE("no-target claims check the task target window", "[evalharness]") {
    WorldState st = bare_world();
    TaskSpec task = collect_spec(8);
    ActionCommand wait;  // all-false command reads "waiting"

    const std::vector<std::string> none = {"no", "target", "visible", ";", "waiting"};
    CHECK(reasoning_consistent(st, task, wait, none));

    SECTION("a visible target falsifies the claim") {
        st.set_tile(2, 4, TileKind::Tree);
        CHECK_FALSE(reasoning_consistent(st, task, wait, none));
    }

    SECTION("explore accepts no-target regardless of the window") {
        WorldState grass = bare_world(TileKind::Grass);
        TaskSpec explore;
        explore.kind = TaskKind::Explore;
        CHECK(reasoning_consistent(grass, explore, wait, none));
    }
}

// ---------------------------------------------------------------------------
// Oracle rationales pass the independent matcher
// ---------------------------------------------------------------------------

TEST_CASE("annotated oracle data is fully consistent under replay", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    StageOptions opts = small_opts();
    std::vector<Trajectory> s2 = s2_build(s1_build(tok, opts), tok, opts);
    REQUIRE_FALSE(s2.empty());

    int64_t turns = 0;
    for (const Trajectory& tr : s2) {
        std::vector<ActionCommand> actions = trajectory_actions(tr, tok);
        std::vector<WorldState> states =
            replay_states(tr.world_seed, opts.world_size, tr.task, actions);
        REQUIRE(states.size() == actions.size() + 1);
        for (size_t k = 0; k < tr.turns.size(); ++k) {
            std::vector<std::string> words = tok.words(tr.turns[k].reasoning_tokens);
            CHECK(parse_reasoning(words).well_formed);
            CHECK(reasoning_consistent(states[k], tr.task, actions[k], words));
            turns += 1;
        }
    }
    CHECK(turns > 0);
}

TEST_CASE("golden fixture rationales parse and verify against replay", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    std::vector<Trajectory> got = load_trajectories_jsonl(golden_path(), tok);
    REQUIRE(got.size() == 1);
    const Trajectory& tr = got.front();
    REQUIRE(tr.turns.size() == 2);

    ParsedReasoning p = parse_reasoning(tok.words(tr.turns[0].reasoning_tokens));
    REQUIRE(p.well_formed);
    CHECK(p.entity == "Tree");
    CHECK(p.k == 1);
    CHECK(p.direction == "ahead");
    CHECK(p.phrase == std::vector<std::string>({"turning", "left"}));

    std::vector<ActionCommand> actions = trajectory_actions(tr, tok);
    std::vector<WorldState> states = replay_states(tr.world_seed, 12, tr.task, actions);
    for (size_t k = 0; k < tr.turns.size(); ++k)
        CHECK(reasoning_consistent(states[k], tr.task, actions[k],
                                   tok.words(tr.turns[k].reasoning_tokens)));
}

// ---------------------------------------------------------------------------
// Generation evaluation
// ---------------------------------------------------------------------------

TEST_CASE("generation eval rejects leaked held-out trajectories", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    Trajectory tr = synth_traj(tok, "leak", 5, 1, 2);
    Params p = zero_params(64);
    CHECK_THROWS_AS(eval_generation(p, tok, {tr}, {5}, 64), DataError);
    CHECK_THROWS_WITH(eval_generation(p, tok, {tr}, {5}, 64),
                      "held-out trajectory leak appears in the training set");
    // Disjoint ids pass.
    CHECK_NOTHROW(eval_generation(p, tok, {tr}, {4, 6}, 64));
}

TEST_CASE("generation eval on an all-zero model has exact known scores", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    // Two turns, two reasoning words each, predicted frames uniform at the
    // first codebook entry so the tie-broken image argmax reproduces them.
    Trajectory tr = synth_traj(tok, "zero", 1, 2, 2, /*pred_offset=*/0);
    Params p = zero_params(128);

    GenerationEval ev = eval_generation(p, tok, {tr}, {}, 128);

    // Each turn supervises agt_len-1 = 30 targets: 6 reason, 4 action, 20 frame.
    CHECK(ev.positions == 60);
    // All logits tie, full-vocab argmax picks PAD, never a supervised target.
    CHECK(ev.token_accuracy == 0.0);
    CHECK(ev.reason_accuracy == 0.0);
    CHECK(ev.action_accuracy == 0.0);
    CHECK(ev.frame_token_accuracy == 0.0);
    // The image-restricted argmax tie-breaks to the first code, which is the
    // uniform truth, so the decoded frames match pixel for pixel.
    CHECK(ev.frames == 2);
    CHECK(ev.mean_psnr == 99.0);
}

TEST_CASE("generation eval is invariant to held-out ordering", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    Trajectory a = synth_traj(tok, "a", 1, 3, 2, 1);
    Trajectory b = synth_traj(tok, "b", 2, 3, 2, 2);
    Params p = agent_params();

    GenerationEval ab = eval_generation(p, tok, {a, b}, {}, 256);
    GenerationEval ba = eval_generation(p, tok, {b, a}, {}, 256);

    CHECK(ab.positions == 180);
    CHECK(ab.positions == ba.positions);
    CHECK(ab.frames == 6);
    CHECK(ab.frames == ba.frames);
    CHECK(ab.token_accuracy == ba.token_accuracy);
    CHECK(ab.reason_accuracy == ba.reason_accuracy);
    CHECK(ab.action_accuracy == ba.action_accuracy);
    CHECK(ab.frame_token_accuracy == ba.frame_token_accuracy);
    CHECK_THAT(ab.mean_psnr, WithinAbs(ba.mean_psnr, 1e-12));
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

TEST_CASE("row split holds out the tail and rejects empty data", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    std::vector<Trajectory> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(synth_traj(tok, "t" + std::to_string(i), i, 1, 2));
    PackedDataset ds = pack_sequences(ts, 64, tok);
    REQUIRE(ds.rows.size() == 10);

    RowSplit sp = split_rows(ds, 0.2);
    CHECK(sp.train_rows == 8);
    CHECK(sp.heldout_rows == 2);
    CHECK(heldout_row_ids(ds, sp) == std::vector<int>({8, 9}));

    sp = split_rows(ds, 0.0);
    CHECK(sp.train_rows == 10);
    CHECK(sp.heldout_rows == 0);

    // At least one training row always remains.
    PackedDataset two = pack_sequences({ts[0], ts[1]}, 64, tok);
    sp = split_rows(two, 0.95);
    CHECK(sp.train_rows == 1);
    CHECK(sp.heldout_rows == 1);

    PackedDataset empty;
    CHECK_THROWS_AS(split_rows(empty, 0.1), DataError);
    CHECK_THROWS_WITH(split_rows(empty, 0.1), "empty packed dataset");
}

TEST_CASE("train loop guards vocab agreement and numeric health", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    PackedDataset ds = pack_sequences({synth_traj(tok, "t", 1, 1, 2)}, 64, tok);

    SECTION("vocab mismatch") {
        ModelConfig c = agent_cfg(64);
        c.vocab = 24;
        Params p(c);
        p.init_gaussian();
        AdamState adam(p.size());
        TrainOptions topt;
        CHECK_THROWS_AS(train_loop(p, adam, ds, topt), ConfigError);
        CHECK_THROWS_WITH(train_loop(p, adam, ds, topt), "dataset vocab does not match model vocab");
    }

    SECTION("non-finite activations report the failing step") {
        Params p = agent_params(64);
        p.tok_emb()[1 * 16] = std::numeric_limits<double>::quiet_NaN();  // poison BOS
        AdamState adam(p.size());
        TrainOptions topt;
        topt.opt.total_steps = 5;
        topt.heldout_fraction = 0.0;
        CHECK_THROWS_AS(train_loop(p, adam, ds, topt), NumericError);
        CHECK_THROWS_WITH(train_loop(p, adam, ds, topt), ContainsSubstring("step 1:"));
    }
}

TEST_CASE("train loop logs on the stated cadence", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    PackedDataset ds = pack_sequences({synth_traj(tok, "t", 1, 1, 2)}, 64, tok);
    Params p = agent_params(64);
    AdamState adam(p.size());

    TrainOptions topt;
    topt.opt.total_steps = 7;
    topt.opt.warmup = 2;
    topt.batch_rows = 1;
    topt.heldout_fraction = 0.0;
    topt.eval_every = 0;
    topt.log_every = 3;

    std::vector<int64_t> hook_steps, snap_steps;
    TrainHooks hooks;
    hooks.on_log = [&](const TrainLogEntry& e) { hook_steps.push_back(e.step); };
    hooks.on_snapshot = [&](int64_t t) { snap_steps.push_back(t); };
    hooks.snapshot_every = 2;

    TrainResult res = train_loop(p, adam, ds, topt, hooks);
    CHECK(res.steps_run == 7);
    CHECK(adam.t == 7);
    CHECK_FALSE(res.early_stopped);
    CHECK(res.final_action_accuracy == -1.0);  // eval disabled

    std::vector<int64_t> logged;
    for (const TrainLogEntry& e : res.log) logged.push_back(e.step);
    CHECK(logged == std::vector<int64_t>({1, 3, 6, 7}));
    CHECK(hook_steps == logged);
    CHECK(snap_steps == std::vector<int64_t>({2, 4, 6}));

    for (const TrainLogEntry& e : res.log) {
        CHECK(std::isfinite(e.loss));
        CHECK(e.grad_norm >= 0.0);
        CHECK(e.lr == lr_at(topt.opt, e.step));
        CHECK(e.masked_token_count == 30);  // one synthetic turn per batch row
    }
}

TEST_CASE("train loop early-stops on the held-out action target", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    // Two structurally identical rows: the held-out tail row is a twin of the
    // training row, so action accuracy on it tracks memorization exactly.
    PackedDataset ds =
        pack_sequences({synth_traj(tok, "t1", 1, 1, 2), synth_traj(tok, "t2", 2, 1, 2)}, 64, tok);
    REQUIRE(ds.rows.size() == 2);

    Params p = agent_params(64);
    AdamState adam(p.size());
    TrainOptions topt;
    topt.opt.total_steps = 300;
    topt.opt.warmup = 10;
    topt.opt.lr = 1e-2;
    topt.opt.weight_decay = 0.0;
    topt.batch_rows = 1;
    topt.heldout_fraction = 0.5;
    topt.target_action_accuracy = 0.9;
    topt.eval_every = 5;
    topt.log_every = 0;

    TrainResult res = train_loop(p, adam, ds, topt);
    CHECK(res.early_stopped);
    CHECK(res.steps_run < 300);
    CHECK(res.steps_run == adam.t);
    CHECK(res.final_action_accuracy >= 0.9);

    Workspace ws;
    CHECK(action_accuracy(p, ds, {1}, ws) == res.final_action_accuracy);
}

TEST_CASE("interrupted training resumes bit for bit", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    PackedDataset ds =
        pack_sequences({synth_traj(tok, "t1", 1, 1, 2), synth_traj(tok, "t2", 2, 1, 3)}, 64, tok);

    TrainOptions topt;
    topt.opt.total_steps = 16;
    topt.opt.warmup = 4;
    topt.batch_rows = 1;
    topt.data_seed = 5;
    topt.heldout_fraction = 0.0;
    topt.eval_every = 0;
    topt.log_every = 0;

    // Uninterrupted run.
    Params pa = agent_params(64);
    AdamState aa(pa.size());
    train_loop(pa, aa, ds, topt);

    // Same schedule, but the first half of the steps are driven manually
    // (checkpoint-resume stand-in), then the loop finishes the rest.
    Params pb = agent_params(64);
    AdamState ab(pb.size());
    {
        RowSplit sp = split_rows(ds, topt.heldout_fraction);
        Workspace ws;
        Params grads(pb.cfg());
        while (ab.t < 8) {
            std::vector<int> rows =
                batch_rows_for_step(sp.train_rows, topt.batch_rows, ab.t, topt.data_seed);
            TrainBatch batch = make_batch(ds, rows, topt.flags);
            forward_loss(pb, batch, ws);
            backward(pb, batch, ws, grads);
            opt_step(pb, grads, ab, topt.opt);
        }
    }
    TrainResult res = train_loop(pb, ab, ds, topt);
    CHECK(res.steps_run == 8);  // only the remaining steps
    CHECK(ab.t == 16);
    CHECK(aa.t == 16);

    CHECK(pa.data() == pb.data());
    CHECK(aa.m == ab.m);
    CHECK(aa.v == ab.v);
}

TEST_CASE("train log serializes one JSON object per entry", "[evalharness]") {
    TempDir dir;
    std::vector<TrainLogEntry> log = {{1, 0.5, 1.25, 3e-3, 30}, {2, 0.25, 0.75, 6e-3, 60}};
    auto path = dir.path / "train_log.jsonl";
    write_train_log(path, log);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::vector<ordered_json> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(ordered_json::parse(line));
    REQUIRE(rows.size() == 2);

    std::vector<std::string> keys;
    for (const auto& el : rows[0].items()) keys.push_back(el.key());
    CHECK(keys == std::vector<std::string>({"step", "loss", "grad_norm", "lr", "masked_token_count"}));
    CHECK(rows[0]["step"].get<int64_t>() == 1);
    CHECK(rows[0]["loss"].get<double>() == 0.5);
    CHECK(rows[1]["lr"].get<double>() == 6e-3);
    CHECK(rows[1]["masked_token_count"].get<int64_t>() == 60);

    CHECK_THROWS_AS(write_train_log(dir.path / "absent" / "x.jsonl", log), DataError);
    CHECK_THROWS_WITH(write_train_log(dir.path / "absent" / "x.jsonl", log),
                      ContainsSubstring("cannot open for write"));
}

TEST_CASE("a memorized trajectory scores perfectly under teacher forcing", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    Trajectory tr = synth_traj(tok, "memo", 77, 1, 2, /*pred_offset=*/1);
    PackedDataset ds = pack_sequences({tr}, 64, tok);
    REQUIRE(ds.rows.size() == 1);

    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.context_len = 64;
    c.vocab = tok.layout.vocab_size();
    c.init_std = 0.02;
    c.init_seed = 7;
    Params p(c);
    p.init_gaussian();
    AdamState adam(p.size());

    TrainOptions topt;
    topt.opt.total_steps = 350;
    topt.opt.warmup = 20;
    topt.opt.lr = 1e-2;
    topt.opt.weight_decay = 0.0;
    topt.batch_rows = 1;
    topt.data_seed = 1;
    topt.heldout_fraction = 0.0;
    topt.eval_every = 0;
    topt.log_every = 0;

    TrainResult res = train_loop(p, adam, ds, topt);
    REQUIRE(res.steps_run == 350);
    REQUIRE(res.final_loss < 0.02);

    // Training ids and held-out ids are the same trajectory on purpose: the
    // caller owns the split policy, and here we want the memorized ceiling.
    GenerationEval ev = eval_generation(p, tok, {tr}, {}, 64);
    CHECK(ev.positions == 30);
    CHECK(ev.token_accuracy == 1.0);
    CHECK(ev.reason_accuracy == 1.0);
    CHECK(ev.action_accuracy == 1.0);
    CHECK(ev.frame_token_accuracy == 1.0);
    CHECK(ev.frames == 1);
    CHECK(ev.mean_psnr == 99.0);

    Workspace ws;
    CHECK(action_accuracy(p, ds, {0}, ws) == 1.0);
}

// ---------------------------------------------------------------------------
// Reasoning evaluation end to end
// ---------------------------------------------------------------------------

TEST_CASE("reasoning eval scores greedy rationales against replayed states", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    TaskSpec task = collect_spec(8, ToolMode::Tool);

    SECTION("a policy that always claims no-target parses everywhere") {
        Params p = no_target_params();
        ReasoningEval ev = eval_reasoning(p, tok, task, 12, 40, 2, 3);
        CHECK(ev.turns >= 2);
        CHECK(ev.well_formed == ev.turns);
        CHECK(ev.well_formed_rate == 1.0);
        CHECK(ev.consistent <= ev.well_formed);
        CHECK(ev.consistency >= 0.0);
        CHECK(ev.consistency <= 1.0);

        ReasoningEval again = eval_reasoning(p, tok, task, 12, 40, 2, 3);
        CHECK(again.turns == ev.turns);
        CHECK(again.well_formed == ev.well_formed);
        CHECK(again.consistent == ev.consistent);
    }

    SECTION("a bare-trigger rationale strips to nothing") {
        Params p = trigger_params();
        ReasoningEval ev = eval_reasoning(p, tok, task, 12, 40, 2, 2);
        CHECK(ev.turns > 0);
        CHECK(ev.well_formed == 0);
        CHECK(ev.well_formed_rate == 0.0);
        CHECK(ev.consistency == 0.0);
    }
}

// ---------------------------------------------------------------------------
// Embodied runs through the harness
// ---------------------------------------------------------------------------

TEST_CASE("the scripted expert dominates an untrained policy on shared seeds", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    TaskSpec task = collect_spec(16, ToolMode::Tool);

    EmbodiedStats expert = eval_embodied(
        [&](int64_t seed) {
            Env env(world_gen(seed, 12, task), task);
            return run_expert_episode(env);
        },
        100, 8);
    CHECK(expert.n == 8);
    CHECK(expert.values.size() == 8);
    CHECK(expert.dream_env_accesses == 0);
    CHECK(expert.success_rate >= 0.9);
    CHECK(expert.mean >= 0.9);

    Params p = agent_params();
    AgentOptions base;
    base.temperature = 0.0;
    EmbodiedStats random = eval_embodied(
        [&](int64_t seed) { return run_policy_episode(p, tok, task, 12, seed, 0, base); }, 100, 8);
    CHECK(random.n == 8);
    CHECK(random.success_rate <= expert.success_rate);

    PairedMargin m = paired_margin(expert, random);
    CHECK(m.n == 8);
    CHECK(m.mean_diff > 0.0);
}

TEST_CASE("lookahead sweep shares seeds and keeps depth zero reactive", "[evalharness]") {
    const Tokenizer& tok = shared_tok();
    TaskSpec task = collect_spec(4, ToolMode::Tool);
    Params p = forward_params();
    AgentOptions base;
    base.temperature = 0.0;

    std::vector<SweepPoint> pts = sweep_lookahead(p, tok, task, 12, 700, 2, {0, 1}, base);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].x == 0.0);
    CHECK(pts[1].x == 1.0);
    CHECK(pts[0].stats.n == 2);
    CHECK(pts[1].stats.n == 2);

    // Depth 0 is bit-for-bit the reactive loop under the episode seed scheme.
    for (int64_t seed : {700, 701}) {
        EpisodeRecord via_sweep = run_policy_episode(p, tok, task, 12, seed, 0, base);
        AgentOptions opts = base;
        opts.sample_seed = split(static_cast<uint64_t>(seed), "episode");
        Env env(world_gen(seed, 12, task), task);
        EpisodeRecord direct = run_basic(p, tok, env, opts);
        CHECK(via_sweep.lookahead == 0);
        CHECK(episode_sig(via_sweep) == episode_sig(direct));
    }

    EmbodiedStats manual = eval_embodied(
        [&](int64_t seed) {
            AgentOptions opts = base;
            opts.sample_seed = split(static_cast<uint64_t>(seed), "episode");
            Env env(world_gen(seed, 12, task), task);
            return run_basic(p, tok, env, opts);
        },
        700, 2);
    CHECK(pts[0].stats.values == manual.values);
    CHECK(pts[0].stats.successes == manual.successes);
    CHECK(pts[0].stats.env_accesses == manual.env_accesses);

    // Dreams never touch the environment, and the reactive chain policy is
    // unaffected by planning depth (its review never fires the trigger).
    CHECK(pts[1].stats.dream_env_accesses == 0);
    CHECK(pts[1].stats.values == pts[0].stats.values);

    EpisodeRecord deep = run_policy_episode(p, tok, task, 12, 700, 1, base);
    CHECK(deep.lookahead == 1);
    CHECK(deep.dream_env_accesses == 0);
    REQUIRE_FALSE(deep.records.empty());
    CHECK(deep.records[0].dreams.size() == 1);
}

// ---------------------------------------------------------------------------
// Report helpers
// ---------------------------------------------------------------------------

TEST_CASE("hex64 renders fixed-width lowercase hex", "[evalharness]") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xf) == "000000000000000f");
    CHECK(hex64(0x123456789abcdef0ull) == "123456789abcdef0");
    CHECK(hex64(~0ull) == "ffffffffffffffff");
}

TEST_CASE("params checksum hashes the exact parameter bytes", "[evalharness]") {
    Params p = agent_params(64);
    std::string sum = params_checksum(p);
    CHECK(sum.size() == 16);
    CHECK(sum == hex64(fnv1a64_bytes(p.data().data(), p.size() * sizeof(double))));

    std::string before = sum;
    p.tok_emb()[0] += 1.0;
    CHECK(params_checksum(p) != before);
}

TEST_CASE("stats and report headers serialize with stable keys", "[evalharness]") {
    EmbodiedStats s;
    s.values = {1.0, 2.0};
    s.successes = {true, true};
    s.env_accesses = 11;
    s.dream_env_accesses = 0;
    finalize_stats(s);

    ordered_json j = stats_json(s);
    std::vector<std::string> keys;
    for (const auto& el : j.items()) keys.push_back(el.key());
    CHECK(keys == std::vector<std::string>({"n", "mean", "std", "sem", "success_rate", "values",
                                            "env_accesses", "dream_env_accesses"}));
    CHECK(j["n"].get<int>() == 2);
    CHECK(j["mean"].get<double>() == 1.5);
    CHECK(j["values"].get<std::vector<double>>() == s.values);
    CHECK(j["env_accesses"].get<int64_t>() == 11);

    ordered_json h = report_header("cfg123", "ckpt456");
    keys.clear();
    for (const auto& el : h.items()) keys.push_back(el.key());
    CHECK(keys == std::vector<std::string>({"tool_version", "config_hash", "checkpoint_checksum"}));
    CHECK(h["tool_version"].get<std::string>() == std::string(kToolVersion));
    CHECK(h["config_hash"].get<std::string>() == "cfg123");
    CHECK(h["checkpoint_checksum"].get<std::string>() == "ckpt456");
}
