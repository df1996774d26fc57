#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>

#include "rig/tokenizer.hpp"

using namespace rig;

namespace {

Frame uniform_frame(uint8_t v) {
    Frame f;
    f.pixels.fill(v);
    return f;
}

const Tokenizer& shared_tokenizer() {
    static Tokenizer tok = default_tokenizer();
    return tok;
}

}  // namespace

// ---------------------------------------------------------------------------
// Codebook construction
// ---------------------------------------------------------------------------

TEST_CASE("one uniform frame registers a single patch", "[tokenizer]") {
    Codebook cb;
    cb.add_frame(uniform_frame(0));
    CHECK(cb.size() == 1);
    // All 16 slots encode to the same (and only) code.
    for (int code : cb.encode_frame(uniform_frame(0))) CHECK(code == 0);
}

TEST_CASE("codes are assigned in first-seen raster order", "[tokenizer]") {
    Frame f = uniform_frame(0);
    f.at(0, 0) = 3;  // patch (0,0) now differs from the rest
    Codebook cb;
    cb.add_frame(f);
    CHECK(cb.size() == 2);
    auto codes = cb.encode_frame(f);
    CHECK(codes[0] == 0);
    for (int i = 1; i < kPatchesPerFrame; ++i) CHECK(codes[i] == 1);
}

TEST_CASE("codebook build is deterministic", "[tokenizer]") {
    auto build = [] {
        Codebook cb;
        for (const Frame& f : coverage_frames()) cb.add_frame(f);
        return cb;
    };
    Codebook a = build(), b = build();
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.pattern(i) == b.pattern(i));
}

TEST_CASE("codebook enforces capacity", "[tokenizer]") {
    Codebook cb(2);
    Patch p{};
    cb.add(p);
    p[0] = 1;
    cb.add(p);
    p[0] = 2;
    CHECK_THROWS_AS(cb.add(p), ConfigError);
    CHECK_THROWS_WITH(cb.add(p), Catch::Matchers::ContainsSubstring("capacity"));
    // Re-adding a registered pattern is fine even at capacity.
    p[0] = 1;
    CHECK(cb.add(p) == 1);
}

TEST_CASE("coverage codebook size matches the pattern-family arithmetic", "[tokenizer]") {
    // Family sizes: A0 13*7 + A1 13*7*7 + B 7*7 + C 7^4 + D 7^3 = 3521 emitted
    // patterns; the distinct count after overlap (A0 duplicates A1's t1=Air
    // column, B duplicates C's left-Air quads, etc.) is checked against a
    // brute-force set scan.
    const Codebook& cb = shared_tokenizer().codebook;
    std::set<Patch> distinct;
    for (const Frame& f : coverage_frames())
        for (int pr = 0; pr < 4; ++pr)
            for (int pc = 0; pc < 4; ++pc) distinct.insert(extract_patch(f, pr, pc));
    CHECK(cb.size() == static_cast<int>(distinct.size()));
    CHECK(cb.size() == 3332);
}

// ---------------------------------------------------------------------------
// Encode / decode
// ---------------------------------------------------------------------------

TEST_CASE("in-dictionary frames round-trip exactly", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    for (int64_t seed : {0, 5, 77}) {
        WorldState st = world_gen(seed, 24, TaskSpec{});
        Frame f = render(st);
        auto ids = tok.encode_frame(f);
        REQUIRE(ids.size() == 16);
        CHECK(tok.decode_frame(ids) == f);
    }
}

TEST_CASE("identical frames produce identical token lists", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    Frame f = render(world_gen(13, 24, TaskSpec{}));
    CHECK(tok.encode_frame(f) == tok.encode_frame(f));
}

TEST_CASE("unseen patch falls back to nearest Hamming neighbor", "[tokenizer]") {
    Codebook cb;
    Patch base{};
    base.fill(2);
    int code = cb.add(base);
    Patch far{};
    far.fill(9);
    cb.add(far);

    Patch off = base;
    off[5] = 3;  // one of 16 cells differs from `base`; 16 differ from `far`
    CHECK(cb.find(off) == -1);
    CHECK(cb.encode_patch(off) == code);
}

TEST_CASE("Hamming ties resolve to the lowest code", "[tokenizer]") {
    Codebook cb;
    Patch a{}, b{};
    b.fill(1);
    cb.add(a);  // code 0
    cb.add(b);  // code 1
    Patch half{};
    for (int i = 0; i < 8; ++i) half[i] = 1;  // distance 8 to both
    CHECK(cb.encode_patch(half) == 0);
}

TEST_CASE("decode_frame validates token count and range", "[tokenizer]") {
    Codebook cb;
    cb.add_frame(uniform_frame(0));
    CHECK_THROWS_AS(cb.decode_frame(std::vector<int>(15, 0)), DataError);

    std::vector<int> codes(16, 0);
    codes[3] = cb.size();  // out of range at position 3
    CHECK_THROWS_WITH(cb.decode_frame(codes),
                      Catch::Matchers::ContainsSubstring("position 3"));
}

TEST_CASE("all-same-code list tiles the frame with that patch", "[tokenizer]") {
    Codebook cb;
    Patch p{};
    p.fill(5);
    cb.add(p);
    Frame f = cb.decode_frame(std::vector<int>(16, 0));
    CHECK(f == uniform_frame(5));
}

TEST_CASE("empty codebook cannot encode", "[tokenizer]") {
    Codebook cb;
    CHECK_THROWS_AS(cb.encode_patch(Patch{}), ConfigError);
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

TEST_CASE("psnr sentinel, one-pixel case, and symmetry", "[tokenizer]") {
    Frame a = uniform_frame(0);
    CHECK(psnr(a, a) == 99.0);

    Frame b = a;
    b.at(7, 7) = 15;  // one pixel differs by the full palette range
    double v = psnr(a, b);
    CHECK(v == Catch::Approx(10.0 * std::log10(256.0)).margin(1e-12));
    CHECK(v == Catch::Approx(24.0823996531).margin(1e-6));
    CHECK(psnr(a, b) == psnr(b, a));
}

// ---------------------------------------------------------------------------
// Text vocabulary
// ---------------------------------------------------------------------------

TEST_CASE("text round trip and errors", "[tokenizer]") {
    TextVocab v;
    std::vector<std::string> phrase = {"Next", "action", ":"};
    std::vector<int> ids;
    for (const auto& w : phrase) ids.push_back(v.id(w));
    for (size_t i = 0; i < phrase.size(); ++i) CHECK(v.word(ids[i]) == phrase[i]);

    CHECK_THROWS_AS(v.id("zombie"), DataError);
    CHECK_THROWS_WITH(v.id("zombie"), Catch::Matchers::ContainsSubstring("zombie"));
    CHECK_THROWS_AS(v.word(-1), DataError);
    CHECK_THROWS_AS(v.word(v.size()), DataError);
}

TEST_CASE("default vocabulary has the documented families", "[tokenizer]") {
    TextVocab v;
    CHECK(v.size() == 107);
    // Trigger phrase, in order, right after the structural words.
    CHECK(v.id("Wait") == 7);
    CHECK(v.id("!") == 8);
    CHECK(v.id("Let's") == 9);
    CHECK(v.id("re-observe") == 10);
    CHECK(v.id("...") == 11);
    // Camera tokens: 19 per axis, ascending, "+" prefix on positives.
    CHECK(v.contains("cam_p:-45"));
    CHECK(v.contains("cam_p:0"));
    CHECK(v.contains("cam_p:+45"));
    CHECK(v.contains("cam_y:+5"));
    CHECK_FALSE(v.contains("cam_p:50"));
    CHECK(v.id("cam_p:-40") == v.id("cam_p:-45") + 1);
    CHECK(v.id("cam_y:-45") == v.id("cam_p:+45") + 1);
    for (const char* w : {"forward", "back", "left", "right", "jump", "attack", "place",
                          "sprint", "none", "Tree", "Grass", "Dirt", "Stone", "Pit", "Block",
                          "collect", "wood", "tower", "manual", "tool", "0", "9"})
        CHECK(v.contains(w));
}

TEST_CASE("duplicate words are rejected", "[tokenizer]") {
    CHECK_THROWS_AS(TextVocab({"a", "b", "a"}), ConfigError);
}

// ---------------------------------------------------------------------------
// Unified layout
// ---------------------------------------------------------------------------

TEST_CASE("token ranges are disjoint and contiguous", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    const TokenLayout& L = tok.layout;
    CHECK(L.text_base() == 8);
    CHECK(L.text_count == 107);
    CHECK(L.image_base() == 115);
    CHECK(L.image_count == 3332);
    CHECK(L.vocab_size() == 3447);

    CHECK_FALSE(L.is_text(TokenLayout::kImagine));
    CHECK(L.is_text(L.text_base()));
    CHECK(L.is_text(L.image_base() - 1));
    CHECK_FALSE(L.is_text(L.image_base()));
    CHECK(L.is_image(L.image_base()));
    CHECK(L.is_image(L.vocab_size() - 1));
    CHECK_FALSE(L.is_image(L.vocab_size()));

    CHECK(std::string(TokenLayout::special_name(TokenLayout::kPad)) == "PAD");
    CHECK(std::string(TokenLayout::special_name(TokenLayout::kImagine)) == "IMAGINE");
}

TEST_CASE("encode_frame emits only image-range ids; word_ids only text-range", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    Rng r(404);
    for (int trial = 0; trial < 20; ++trial) {
        Frame f;
        for (auto& px : f.pixels) px = static_cast<uint8_t>(r.below(16));
        for (int32_t id : tok.encode_frame(f)) CHECK(tok.layout.is_image(id));
    }
    for (const std::string& w : tok.vocab.words()) CHECK(tok.layout.is_text(tok.word_id(w)));
}

TEST_CASE("global-id word and frame accessors reject wrong ranges", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    CHECK_THROWS_AS(tok.word(TokenLayout::kBos), DataError);
    CHECK_THROWS_AS(tok.word(tok.layout.image_base()), DataError);
    std::vector<int32_t> bad(16, tok.word_id("Tree"));
    CHECK_THROWS_AS(tok.decode_frame(bad), DataError);
}

TEST_CASE("global-id frame round trip", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    Frame f = render(world_gen(3, 24, TaskSpec{TaskKind::Dig, 100, ToolMode::Tool}));
    CHECK(tok.decode_frame(tok.encode_frame(f)) == f);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

TEST_CASE("codebook JSON round trip preserves codes", "[tokenizer]") {
    Codebook cb(64);
    Frame f = uniform_frame(0);
    f.at(0, 0) = 3;
    f.at(8, 8) = 7;
    cb.add_frame(f);
    Codebook rt = Codebook::from_json(cb.to_json());
    REQUIRE(rt.size() == cb.size());
    CHECK(rt.k_max() == 64);
    for (int i = 0; i < cb.size(); ++i) CHECK(rt.pattern(i) == cb.pattern(i));
}

TEST_CASE("codebook from_json validates schema", "[tokenizer]") {
    Codebook cb;
    cb.add(Patch{});
    ordered_json good = cb.to_json();

    ordered_json bad_ver = good;
    bad_ver["version"] = 2;
    CHECK_THROWS_AS(Codebook::from_json(bad_ver), DataError);

    ordered_json bad_px = good;
    bad_px["patterns"][0][0] = 16;
    CHECK_THROWS_AS(Codebook::from_json(bad_px), DataError);

    ordered_json missing = good;
    missing.erase("patterns");
    CHECK_THROWS_AS(Codebook::from_json(missing), DataError);
}

TEST_CASE("vocab manifest self-checks", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    ordered_json m = tok.vocab_manifest();
    CHECK(m["image_count"] == 3332);
    CHECK(m["specials"].size() == 8);
    CHECK_NOTHROW(tok.check_manifest(m));

    ordered_json tampered = m;
    tampered["words"][0] = "Tampered";
    CHECK_THROWS_AS(tok.check_manifest(tampered), DataError);
    ordered_json wrong_count = m;
    wrong_count["image_count"] = 5;
    CHECK_THROWS_AS(tok.check_manifest(wrong_count), DataError);
}

// ---------------------------------------------------------------------------
// Round-trip property over live rollouts
// ---------------------------------------------------------------------------

TEST_CASE("every rendered frame in a random rollout round-trips", "[tokenizer]") {
    const Tokenizer& tok = shared_tokenizer();
    WorldState st = world_gen(2026, 24, TaskSpec{TaskKind::Explore, 500, ToolMode::Manual});
    Rng r(6);
    for (int i = 0; i < 150; ++i) {
        ActionCommand a;
        a.forward = r.below(2);
        a.right = r.below(2);
        a.attack = r.below(2);
        a.cam_yaw_delta = static_cast<int>(r.below(19)) * 5 - 45;
        a.cam_pitch_delta = static_cast<int>(r.below(19)) * 5 - 45;
        step(st, a);
        Frame f = render(st);
        CHECK(tok.decode_frame(tok.encode_frame(f)) == f);
    }
}
