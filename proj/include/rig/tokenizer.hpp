#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rig/error.hpp"
#include "rig/minegrid.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Patch codebook (exact lookup VQ stand-in)
// ---------------------------------------------------------------------------

inline constexpr int kPatchSize = 4;
inline constexpr int kPatchesPerFrame = (kFrameSize / kPatchSize) * (kFrameSize / kPatchSize);  // 16
inline constexpr int kDefaultKMax = 4096;

using Patch = std::array<uint8_t, kPatchSize * kPatchSize>;

inline Patch extract_patch(const Frame& f, int pr, int pc) {
    Patch p;
    for (int r = 0; r < kPatchSize; ++r)
        for (int c = 0; c < kPatchSize; ++c)
            p[static_cast<size_t>(r) * kPatchSize + c] = f.at(pr * kPatchSize + r, pc * kPatchSize + c);
    return p;
}

// Exact-match patch dictionary.  Codes are assigned in first-seen order over
// the build corpus; encoding an unseen patch falls back to the nearest
// registered patch by Hamming distance (ties break to the lowest code).
class Codebook {
public:
    Codebook() = default;
    explicit Codebook(int k_max) : k_max_(k_max) {}

    int size() const { return static_cast<int>(patterns_.size()); }
    int k_max() const { return k_max_; }
    const Patch& pattern(int code) const { return patterns_[code]; }

    // Registers a pattern; returns its code.  Throws ConfigError at capacity.
    int add(const Patch& p) {
        auto it = index_.find(key(p));
        if (it != index_.end()) return it->second;
        if (size() >= k_max_) throw ConfigError("codebook capacity exceeded");
        int code = size();
        patterns_.push_back(p);
        index_.emplace(key(p), code);
        return code;
    }

    void add_frame(const Frame& f) {
        for (int pr = 0; pr < kFrameSize / kPatchSize; ++pr)
            for (int pc = 0; pc < kFrameSize / kPatchSize; ++pc) add(extract_patch(f, pr, pc));
    }

    // Exact lookup; -1 when the pattern is unregistered.
    int find(const Patch& p) const {
        auto it = index_.find(key(p));
        return it == index_.end() ? -1 : it->second;
    }

    // Exact match or nearest registered pattern by Hamming distance over the
    // 16 pixels; equal distances resolve to the lowest code.
    int encode_patch(const Patch& p) const {
        if (patterns_.empty()) throw ConfigError("empty codebook");
        int exact = find(p);
        if (exact >= 0) return exact;
        int best = 0, best_d = kPatchSize * kPatchSize + 1;
        for (int i = 0; i < size(); ++i) {
            int d = 0;
            for (int j = 0; j < kPatchSize * kPatchSize; ++j) d += patterns_[i][j] != p[j];
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    // 16 local codes in raster patch order.
    std::vector<int> encode_frame(const Frame& f) const {
        std::vector<int> out;
        out.reserve(kPatchesPerFrame);
        for (int pr = 0; pr < kFrameSize / kPatchSize; ++pr)
            for (int pc = 0; pc < kFrameSize / kPatchSize; ++pc)
                out.push_back(encode_patch(extract_patch(f, pr, pc)));
        return out;
    }

    Frame decode_frame(const std::vector<int>& codes) const {
        if (static_cast<int>(codes.size()) != kPatchesPerFrame)
            throw DataError("frame token count must be 16");
        Frame f;
        for (int i = 0; i < kPatchesPerFrame; ++i) {
            int code = codes[i];
            if (code < 0 || code >= size())
                throw DataError("image token out of codebook range at position " + std::to_string(i));
            const Patch& p = patterns_[code];
            int pr = i / (kFrameSize / kPatchSize), pc = i % (kFrameSize / kPatchSize);
            for (int r = 0; r < kPatchSize; ++r)
                for (int c = 0; c < kPatchSize; ++c)
                    f.at(pr * kPatchSize + r, pc * kPatchSize + c) = p[static_cast<size_t>(r) * kPatchSize + c];
        }
        return f;
    }

    ordered_json to_json() const {
        ordered_json j;
        j["version"] = 1;
        j["patch_size"] = kPatchSize;
        j["k_max"] = k_max_;
        ordered_json pats = ordered_json::array();
        for (const Patch& p : patterns_) {
            ordered_json row = ordered_json::array();
            for (uint8_t v : p) row.push_back(static_cast<int>(v));
            pats.push_back(std::move(row));
        }
        j["patterns"] = std::move(pats);
        return j;
    }

    static Codebook from_json(const ordered_json& j) {
        try {
            if (j.at("version").get<int>() != 1) throw DataError("unsupported codebook version");
            if (j.at("patch_size").get<int>() != kPatchSize) throw DataError("unsupported patch size");
            Codebook cb(j.at("k_max").get<int>());
            for (const auto& row : j.at("patterns")) {
                if (row.size() != kPatchSize * kPatchSize) throw DataError("bad pattern length");
                Patch p;
                for (int i = 0; i < kPatchSize * kPatchSize; ++i) {
                    int v = row[i].get<int>();
                    if (v < 0 || v >= kPaletteSize) throw DataError("pattern pixel out of palette");
                    p[i] = static_cast<uint8_t>(v);
                }
                cb.add(p);
            }
            return cb;
        } catch (const ordered_json::exception& e) {
            throw DataError(std::string("codebook schema violation: ") + e.what());
        }
    }

private:
    static uint64_t key(const Patch& p) {
        // 16 pixels x 4 bits fits exactly in a u64.
        uint64_t k = 0;
        for (uint8_t v : p) k = (k << 4) | (v & 0xF);
        return k;
    }

    int k_max_ = kDefaultKMax;
    std::vector<Patch> patterns_;
    std::unordered_map<uint64_t, int> index_;
};

// Enumerates every patch pattern the renderer can produce, by construction of
// the frame layout (a sound superset of all reachable patches):
//   A0: HUD patch at column 0  — (13 hud bins) x (7 tile colors)
//   A1: HUD patch, columns 1-3 — 13 x 7 x 7
//   B : left-pad patch, rows 1-3 col 0 — 7 x 7 (two stacked tiles)
//   C : full 2x2-tile quad — 7^4
//   D : agent quad (marker block top-left) — 7^3
// Patterns are emitted in the documented order above, packed 16 per frame, so
// building a codebook from these frames yields stable codes.
inline std::vector<Frame> coverage_frames() {
    std::vector<Patch> pats;
    auto tile2x2 = [](Patch& p, int r0, int c0, uint8_t color) {
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) p[static_cast<size_t>(r0 + r) * kPatchSize + (c0 + c)] = color;
    };
    // A0 and A1: row 0 = hud, row 1 = pad(0), rows 2-3 = tile colors.
    for (int hud = 0; hud <= 12; ++hud) {
        for (int t = 0; t < kTileKinds; ++t) {
            Patch p{};
            for (int c = 0; c < kPatchSize; ++c) p[c] = static_cast<uint8_t>(hud);
            tile2x2(p, 2, 2, tile_color(static_cast<TileKind>(t)));
            pats.push_back(p);
        }
    }
    for (int hud = 0; hud <= 12; ++hud)
        for (int t1 = 0; t1 < kTileKinds; ++t1)
            for (int t2 = 0; t2 < kTileKinds; ++t2) {
                Patch p{};
                for (int c = 0; c < kPatchSize; ++c) p[c] = static_cast<uint8_t>(hud);
                tile2x2(p, 2, 0, tile_color(static_cast<TileKind>(t1)));
                tile2x2(p, 2, 2, tile_color(static_cast<TileKind>(t2)));
                pats.push_back(p);
            }
    // B: columns 0-1 pad, columns 2-3 show two stacked tiles.
    for (int ta = 0; ta < kTileKinds; ++ta)
        for (int tb = 0; tb < kTileKinds; ++tb) {
            Patch p{};
            tile2x2(p, 0, 2, tile_color(static_cast<TileKind>(ta)));
            tile2x2(p, 2, 2, tile_color(static_cast<TileKind>(tb)));
            pats.push_back(p);
        }
    // C: full quads.
    for (int t1 = 0; t1 < kTileKinds; ++t1)
        for (int t2 = 0; t2 < kTileKinds; ++t2)
            for (int t3 = 0; t3 < kTileKinds; ++t3)
                for (int t4 = 0; t4 < kTileKinds; ++t4) {
                    Patch p{};
                    tile2x2(p, 0, 0, tile_color(static_cast<TileKind>(t1)));
                    tile2x2(p, 0, 2, tile_color(static_cast<TileKind>(t2)));
                    tile2x2(p, 2, 0, tile_color(static_cast<TileKind>(t3)));
                    tile2x2(p, 2, 2, tile_color(static_cast<TileKind>(t4)));
                    pats.push_back(p);
                }
    // D: agent quad.
    for (int t2 = 0; t2 < kTileKinds; ++t2)
        for (int t3 = 0; t3 < kTileKinds; ++t3)
            for (int t4 = 0; t4 < kTileKinds; ++t4) {
                Patch p{};
                tile2x2(p, 0, 0, kAgentColor);
                tile2x2(p, 0, 2, tile_color(static_cast<TileKind>(t2)));
                tile2x2(p, 2, 0, tile_color(static_cast<TileKind>(t3)));
                tile2x2(p, 2, 2, tile_color(static_cast<TileKind>(t4)));
                pats.push_back(p);
            }

    std::vector<Frame> frames;
    for (size_t i = 0; i < pats.size(); i += kPatchesPerFrame) {
        Frame f;
        for (int slot = 0; slot < kPatchesPerFrame; ++slot) {
            const Patch& p = pats[std::min(i + slot, pats.size() - 1)];
            int pr = slot / (kFrameSize / kPatchSize), pc = slot % (kFrameSize / kPatchSize);
            for (int r = 0; r < kPatchSize; ++r)
                for (int c = 0; c < kPatchSize; ++c)
                    f.at(pr * kPatchSize + r, pc * kPatchSize + c) = p[static_cast<size_t>(r) * kPatchSize + c];
        }
        frames.push_back(f);
    }
    return frames;
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

// Peak signal-to-noise ratio in dB over the 16-color palette (peak = 15).
// Identical frames return the sentinel 99.0.
inline double psnr(const Frame& a, const Frame& b) {
    double sq = 0.0;
    for (int i = 0; i < kFrameSize * kFrameSize; ++i) {
        double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        sq += d * d;
    }
    if (sq == 0.0) return 99.0;
    double mse = sq / (kFrameSize * kFrameSize);
    return 10.0 * std::log10(15.0 * 15.0 / mse);
}

// ---------------------------------------------------------------------------
// Text vocabulary
// ---------------------------------------------------------------------------

// Closed word list in a fixed, documented order; ids are positions in this
// list.  Everything the oracles and the action/turn grammar emit is here.
inline const std::vector<std::string>& default_text_words() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> w = {
            // structural
            "The", "reasoning", ":", "Next", "action", "next", "frame",
            // re-observe trigger
            "Wait", "!", "Let's", "re-observe", "...",
            // action flags
            "forward", "back", "left", "right", "jump", "attack", "place", "sprint", "none",
        };
        // camera tokens: cam_p:-45 .. cam_p:+45, then cam_y, ascending
        for (const char* axis : {"cam_p:", "cam_y:"}) {
            for (int v = -45; v <= 45; v += 5) {
                std::string t = axis;
                if (v > 0) t += "+";
                t += std::to_string(v);
                w.push_back(t);
            }
        }
        std::vector<std::string> rest = {
            // task words
            "collect", "wood", "grass", "dirt", "dig", "explore", "build", "tower", "manual", "tool",
            // reasoning template words
            "a", "is", "tiles", "ahead", "behind", "below", ";", "no", "target", "visible",
            "attacking", "it", "moving", "turning", "stepping", "building", "up", "digging", "down",
            "waiting", "looking", "jumping",
            // entity words
            "Tree", "Grass", "Dirt", "Stone", "Pit", "Block",
            // digits
            "0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
        w.insert(w.end(), rest.begin(), rest.end());
        return w;
    }();
    return words;
}

class TextVocab {
public:
    TextVocab() : TextVocab(default_text_words()) {}

    explicit TextVocab(std::vector<std::string> words) : words_(std::move(words)) {
        for (size_t i = 0; i < words_.size(); ++i) {
            if (!index_.emplace(words_[i], static_cast<int>(i)).second)
                throw ConfigError("duplicate word in text vocabulary: " + words_[i]);
        }
    }

    int size() const { return static_cast<int>(words_.size()); }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) throw DataError("word not in vocabulary: " + w);
        return it->second;
    }

    const std::string& word(int id) const {
        if (id < 0 || id >= size()) throw DataError("text id out of range");
        return words_[id];
    }

    bool contains(const std::string& w) const { return index_.count(w) > 0; }

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Unified token layout
// ---------------------------------------------------------------------------

// Global id space: 8 specials, then text ids, then image ids.  `image_count`
// is the size of the codebook actually built (capacity k_max may be larger).
struct TokenLayout {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kHum = 3;
    static constexpr int kAgt = 4;
    static constexpr int kImgOpen = 5;
    static constexpr int kImgClose = 6;
    static constexpr int kImagine = 7;
    static constexpr int kSpecials = 8;

    int text_count = 0;
    int image_count = 0;

    int text_base() const { return kSpecials; }
    int image_base() const { return kSpecials + text_count; }
    int vocab_size() const { return kSpecials + text_count + image_count; }

    bool is_text(int id) const { return id >= text_base() && id < image_base(); }
    bool is_image(int id) const { return id >= image_base() && id < vocab_size(); }

    static const char* special_name(int id) {
        static constexpr const char* names[kSpecials] = {"PAD", "BOS", "EOS",       "HUM",
                                                         "AGT", "IMG_OPEN", "IMG_CLOSE", "IMAGINE"};
        return names[id];
    }
};

// Bundles the three token sources behind a single global-id interface.
struct Tokenizer {
    TextVocab vocab;
    Codebook codebook;
    TokenLayout layout;

    Tokenizer(TextVocab v, Codebook cb) : vocab(std::move(v)), codebook(std::move(cb)) {
        layout.text_count = vocab.size();
        layout.image_count = codebook.size();
    }

    int word_id(const std::string& w) const { return layout.text_base() + vocab.id(w); }

    const std::string& word(int global_id) const {
        if (!layout.is_text(global_id)) throw DataError("global id is not a text token");
        return vocab.word(global_id - layout.text_base());
    }

    std::vector<int32_t> word_ids(const std::vector<std::string>& ws) const {
        std::vector<int32_t> out;
        out.reserve(ws.size());
        for (const auto& w : ws) out.push_back(word_id(w));
        return out;
    }

    std::vector<std::string> words(const std::vector<int32_t>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int32_t id : ids) out.push_back(word(id));
        return out;
    }

    // 16 global image ids (no delimiters).
    std::vector<int32_t> encode_frame(const Frame& f) const {
        std::vector<int32_t> out;
        for (int code : codebook.encode_frame(f)) out.push_back(layout.image_base() + code);
        return out;
    }

    Frame decode_frame(const std::vector<int32_t>& global_ids) const {
        std::vector<int> codes;
        codes.reserve(global_ids.size());
        for (int32_t id : global_ids) {
            if (!layout.is_image(id)) throw DataError("global id is not an image token");
            codes.push_back(id - layout.image_base());
        }
        return codebook.decode_frame(codes);
    }

    ordered_json vocab_manifest() const {
        ordered_json j;
        j["version"] = 1;
        ordered_json sp = ordered_json::array();
        for (int i = 0; i < TokenLayout::kSpecials; ++i) sp.push_back(TokenLayout::special_name(i));
        j["specials"] = std::move(sp);
        j["words"] = vocab.words();
        j["image_count"] = layout.image_count;
        j["k_max"] = codebook.k_max();
        return j;
    }

    // Validates that a vocab manifest matches this tokenizer exactly.
    void check_manifest(const ordered_json& j) const {
        try {
            if (j.at("version").get<int>() != 1) throw DataError("unsupported vocab manifest version");
            auto words = j.at("words").get<std::vector<std::string>>();
            if (words != vocab.words()) throw DataError("vocab manifest word list mismatch");
            if (j.at("image_count").get<int>() != layout.image_count)
                throw DataError("vocab manifest image_count mismatch");
        } catch (const ordered_json::exception& e) {
            throw DataError(std::string("vocab manifest schema violation: ") + e.what());
        }
    }
};

// The standard tokenizer used by the pipeline: default words + the coverage
// codebook, which registers every renderable patch up front so frame
// round-trips are exact on any reachable observation.
inline Tokenizer default_tokenizer(int k_max = kDefaultKMax) {
    Codebook cb(k_max);
    for (const Frame& f : coverage_frames()) cb.add_frame(f);
    return Tokenizer(TextVocab(), std::move(cb));
}

}  // namespace rig
