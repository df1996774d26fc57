#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rig/error.hpp"
#include "rig/rng.hpp"

namespace rig {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Tiles, materials, tasks
// ---------------------------------------------------------------------------

enum class TileKind : uint8_t { Air = 0, Tree, Grass, Dirt, Stone, Pit, PlacedBlock };
inline constexpr int kTileKinds = 7;

enum class Material : uint8_t { Wood = 0, Grass, Dirt, Stone };
inline constexpr int kMaterials = 4;

inline const char* tile_name(TileKind k) {
    switch (k) {
        case TileKind::Air: return "air";
        case TileKind::Tree: return "tree";
        case TileKind::Grass: return "grass";
        case TileKind::Dirt: return "dirt";
        case TileKind::Stone: return "stone";
        case TileKind::Pit: return "pit";
        case TileKind::PlacedBlock: return "placed_block";
    }
    return "?";
}

inline const char* material_name(Material m) {
    switch (m) {
        case Material::Wood: return "wood";
        case Material::Grass: return "grass";
        case Material::Dirt: return "dirt";
        case Material::Stone: return "stone";
    }
    return "?";
}

enum class ToolMode : uint8_t { Manual = 0, Tool };

inline const char* tool_mode_name(ToolMode m) { return m == ToolMode::Manual ? "manual" : "tool"; }

enum class TaskKind : uint8_t { CollectWood = 0, CollectGrass, CollectDirt, Dig, Explore, Tower };
inline constexpr int kTaskKinds = 6;

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::CollectWood: return "collect_wood";
        case TaskKind::CollectGrass: return "collect_grass";
        case TaskKind::CollectDirt: return "collect_dirt";
        case TaskKind::Dig: return "dig";
        case TaskKind::Explore: return "explore";
        case TaskKind::Tower: return "tower";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
    for (int i = 0; i < kTaskKinds; ++i) {
        TaskKind k = static_cast<TaskKind>(i);
        if (s == task_kind_name(k)) return k;
    }
    throw ConfigError("unknown task kind: " + s);
}

inline ToolMode tool_mode_from_name(const std::string& s) {
    if (s == "manual") return ToolMode::Manual;
    if (s == "tool") return ToolMode::Tool;
    throw ConfigError("unknown tool mode: " + s);
}

struct Rules {
    bool peaceful = true;
    bool keep_inventory = true;
    bool frozen_daylight = true;
};

struct TaskSpec {
    TaskKind kind = TaskKind::CollectWood;
    int budget_steps = 500;
    ToolMode tool_mode = ToolMode::Manual;
};

// Material collected when a tile is broken; Stone and PlacedBlock are
// unbreakable terrain so they never appear here.
inline Material tile_material(TileKind k) {
    switch (k) {
        case TileKind::Tree: return Material::Wood;
        case TileKind::Grass: return Material::Grass;
        case TileKind::Dirt: return Material::Dirt;
        default: throw Error("tile has no material");
    }
}

// The material the scripted data pipeline seeds the world with for each task.
// Explore has no consumable target; it gets Grass as decoration so worlds are
// visually non-trivial.
inline TileKind task_target_tile(TaskKind k) {
    switch (k) {
        case TaskKind::CollectWood: return TileKind::Tree;
        case TaskKind::CollectGrass: return TileKind::Grass;
        case TaskKind::CollectDirt: return TileKind::Dirt;
        case TaskKind::Dig: return TileKind::Dirt;
        case TaskKind::Explore: return TileKind::Grass;
        case TaskKind::Tower: return TileKind::Dirt;
    }
    throw Error("bad task kind");
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

// One environment tick worth of input.  Camera deltas are multiples of 5 in
// [-45, +45]; step() normalizes out-of-contract values (round to the nearest
// multiple of 5, then clamp) so the dynamics stay total.
struct ActionCommand {
    bool forward = false;
    bool back = false;
    bool left = false;
    bool right = false;
    bool jump = false;
    bool attack = false;
    bool place = false;
    bool sprint = false;
    int cam_pitch_delta = 0;
    int cam_yaw_delta = 0;

    bool operator==(const ActionCommand&) const = default;
};

inline ActionCommand cam_yaw_action(int dy) {
    ActionCommand a;
    a.cam_yaw_delta = dy;
    return a;
}

inline ActionCommand cam_pitch_action(int dp) {
    ActionCommand a;
    a.cam_pitch_delta = dp;
    return a;
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

inline constexpr int kFrameSize = 16;
inline constexpr int kPaletteSize = 16;

struct Frame {
    std::array<uint8_t, kFrameSize * kFrameSize> pixels{};

    uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * kFrameSize + c]; }
    uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * kFrameSize + c]; }

    bool operator==(const Frame&) const = default;
};

// Tile colors occupy palette slots 0..6 (indexed by TileKind); the agent
// marker is slot 15; HUD bins reuse slots 0..12 on row 0 only.
inline constexpr uint8_t kAgentColor = 15;

inline uint8_t tile_color(TileKind k) { return static_cast<uint8_t>(k); }

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct WorldState {
    int size = 24;
    std::vector<TileKind> grid;  // row-major size*size

    int agent_row = 0;
    int agent_col = 0;
    int agent_z = 0;       // vertical offset: >0 on a placed stack, <0 in a dig hole
    int yaw_deg = 0;       // [0, 360), multiple of 5; 0 = north (-row), 90 = east (+col)
    int pitch_deg = 0;     // [-90, +90], multiple of 5; +down

    std::array<int64_t, kMaterials> inventory{};

    // Height of player-built stacks keyed by cell.  A cell with a stack the
    // agent is not standing on renders/collides as PlacedBlock via `grid`.
    std::map<std::pair<int, int>, int> placed_stack;
    std::set<std::pair<int, int>> visited;
    std::map<std::pair<int, int>, int> hit_progress;  // partial hits on multi-hit tiles

    int64_t step_count = 0;
    int64_t seed = 0;
    Rules rules;
    ToolMode tool_mode = ToolMode::Manual;
    int spawn_row = 0;
    int spawn_col = 0;

    TileKind tile(int r, int c) const { return grid[static_cast<size_t>(r) * size + c]; }
    void set_tile(int r, int c, TileKind k) { grid[static_cast<size_t>(r) * size + c] = k; }
    bool in_bounds(int r, int c) const { return r >= 0 && r < size && c >= 0 && c < size; }
};

// Step-level events, mainly consumed by tests and the scripted oracles.
enum class EventKind : uint8_t { Bump, Fell, Hit, Mined, Dug, Placed };

struct Event {
    EventKind kind;
    TileKind tile = TileKind::Air;
};

using EventList = std::vector<Event>;

// ---------------------------------------------------------------------------
// Direction helpers
// ---------------------------------------------------------------------------

// Compass index 0..7 = N, NE, E, SE, S, SW, W, NW.
inline constexpr int kDir8Row[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
inline constexpr int kDir8Col[8] = {0, 1, 1, 1, 0, -1, -1, -1};

// Nearest of the 8 compass directions; exact midpoints round clockwise.
// yaw is a multiple of 5 in [0, 360), so the arithmetic below is exact.
inline int round8(int yaw) { return ((yaw * 2 + 45) / 90) % 8; }

// Nearest of the 4 cardinals (0=N,1=E,2=S,3=W); midpoints round clockwise.
inline int round4(int yaw) { return ((yaw + 45) / 90) % 4; }

inline int wrap_yaw(int yaw) {
    int y = yaw % 360;
    if (y < 0) y += 360;
    return y;
}

// Signed circular difference a-b in (-180, 180].
inline int yaw_diff(int a, int b) {
    int d = (a - b) % 360;
    if (d <= -180) d += 360;
    if (d > 180) d -= 360;
    return d;
}

inline int clamp_int(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Round to the nearest multiple of 5, half away from zero, exact in integers.
inline int round_mult5(int v) {
    int s = v < 0 ? -1 : 1;
    int a = v < 0 ? -v : v;
    return s * ((a + 2) / 5) * 5;
}

// ---------------------------------------------------------------------------
// World generation
// ---------------------------------------------------------------------------

// Deterministic placement procedure (fully specified so it can be
// re-implemented independently):
//   k0 = mix64(seed)
//   Border cells (row/col 0 or size-1) are Stone.  Interior starts as Air.
//   Feature counts: target tile   n_t = max(4, size*size/48)
//                   other two collectибles ... see code: n_o = max(2, size*size/96)
//                   stone scatter n_s = size*size/64
//                   pits          n_p = size*size/96
//   Placement loop for stream id S with count N:
//     key = split(k0, S); ctr = 0; placed = 0
//     while placed < N:  r = 1 + draw(key,ctr) % (size-2); c = 1 + draw(key,ctr+1) % (size-2)
//                        ctr += 2;  if tile(r,c)==Air { place; ++placed }
//     (attempts are capped at 64*size*size; exceeding the cap is a ConfigError)
//   Stream ids: 1 = target tile, 2/3 = the other two collectible kinds in
//   TileKind order, 4 = stone, 5 = pits, 6 = agent spawn (draw until Air).
//   Initial yaw = 5 * (draw(split(k0,7),0) % 72), pitch = 0.
inline WorldState world_gen(int64_t seed, int size, const TaskSpec& task) {
    if (size < 8 || size > 64) throw ConfigError("world size out of range [8,64]");
    if (task.budget_steps < 0) throw ConfigError("negative step budget");

    WorldState st;
    st.size = size;
    st.seed = seed;
    st.tool_mode = task.tool_mode;
    st.grid.assign(static_cast<size_t>(size) * size, TileKind::Air);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            if (r == 0 || c == 0 || r == size - 1 || c == size - 1) st.set_tile(r, c, TileKind::Stone);

    const uint64_t k0 = mix64(static_cast<uint64_t>(seed));
    const int interior = size - 2;

    auto scatter = [&](uint64_t stream, TileKind kind, int count) {
        uint64_t key = split(k0, stream);
        uint64_t ctr = 0;
        int placed = 0;
        const uint64_t cap = 64ull * size * size;
        while (placed < count) {
            if (ctr >= cap) throw ConfigError("world generation failed to place features");
            int r = 1 + static_cast<int>(draw(key, ctr) % interior);
            int c = 1 + static_cast<int>(draw(key, ctr + 1) % interior);
            ctr += 2;
            if (st.tile(r, c) == TileKind::Air) {
                st.set_tile(r, c, kind);
                ++placed;
            }
        }
    };

    const TileKind target = task_target_tile(task.kind);
    const int n_target = std::max(4, size * size / 48);
    const int n_other = std::max(2, size * size / 96);

    scatter(1, target, n_target);
    uint64_t stream = 2;
    for (TileKind k : {TileKind::Tree, TileKind::Grass, TileKind::Dirt}) {
        if (k == target) continue;
        scatter(stream++, k, n_other);
    }
    scatter(4, TileKind::Stone, size * size / 64);
    scatter(5, TileKind::Pit, size * size / 96);

    {
        uint64_t key = split(k0, 6);
        uint64_t ctr = 0;
        const uint64_t cap = 64ull * size * size;
        for (;;) {
            if (ctr >= cap) throw ConfigError("world generation failed to place agent");
            int r = 1 + static_cast<int>(draw(key, ctr) % interior);
            int c = 1 + static_cast<int>(draw(key, ctr + 1) % interior);
            ctr += 2;
            if (st.tile(r, c) == TileKind::Air) {
                st.agent_row = st.spawn_row = r;
                st.agent_col = st.spawn_col = c;
                break;
            }
        }
    }
    st.yaw_deg = 5 * static_cast<int>(draw(split(k0, 7), 0) % 72);
    st.pitch_deg = 0;
    st.visited.insert({st.agent_row, st.agent_col});
    return st;
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

namespace detail {

inline bool walkable_tile(TileKind k) {
    return k == TileKind::Air || k == TileKind::Grass || k == TileKind::Dirt || k == TileKind::Pit;
}

// Move one cell in compass direction d.  Returns events for bump/fall.
inline void try_move(WorldState& st, int d, EventList& ev) {
    int nr = st.agent_row + kDir8Row[d];
    int nc = st.agent_col + kDir8Col[d];
    if (!st.in_bounds(nr, nc) || !walkable_tile(st.tile(nr, nc))) {
        ev.push_back({EventKind::Bump, st.in_bounds(nr, nc) ? st.tile(nr, nc) : TileKind::Stone});
        return;
    }
    // Leaving a cell with a player-built stack turns it into solid terrain.
    auto here = std::pair<int, int>{st.agent_row, st.agent_col};
    if (st.agent_z > 0 && st.placed_stack.count(here) && st.placed_stack[here] > 0)
        st.set_tile(st.agent_row, st.agent_col, TileKind::PlacedBlock);

    if (st.tile(nr, nc) == TileKind::Pit) {
        ev.push_back({EventKind::Fell, TileKind::Pit});
        st.agent_row = st.spawn_row;
        st.agent_col = st.spawn_col;
        st.agent_z = 0;
        if (!st.rules.keep_inventory) st.inventory.fill(0);
        st.visited.insert({st.agent_row, st.agent_col});
        return;
    }
    st.agent_row = nr;
    st.agent_col = nc;
    st.agent_z = 0;  // vertical offset is per-cell; moving always lands on the surface
    st.visited.insert({nr, nc});
}

}  // namespace detail

// Applies one action.  Sub-action precedence within a tick is fixed:
// camera, then movement, then attack, then place.  At most one translation
// per tick with priority forward > back > left > right; sprint doubles a
// forward move.  All combinations are total (ill-posed ones are no-ops).
inline EventList step(WorldState& st, const ActionCommand& a) {
    EventList ev;

    // 1. Camera.
    int dp = clamp_int(round_mult5(a.cam_pitch_delta), -45, 45);
    int dy = clamp_int(round_mult5(a.cam_yaw_delta), -45, 45);
    st.pitch_deg = clamp_int(st.pitch_deg + dp, -90, 90);
    st.yaw_deg = wrap_yaw(st.yaw_deg + dy);

    // 2. Movement (one translation per tick; sprint doubles forward).
    const int heading = round8(st.yaw_deg);
    if (a.forward) {
        detail::try_move(st, heading, ev);
        if (a.sprint) detail::try_move(st, heading, ev);
    } else if (a.back) {
        detail::try_move(st, (heading + 4) % 8, ev);
    } else if (a.left) {
        detail::try_move(st, (heading + 6) % 8, ev);
    } else if (a.right) {
        detail::try_move(st, (heading + 2) % 8, ev);
    }

    // 3. Attack: looking down (pitch >= +45) digs the supporting cell;
    //    otherwise hits the cell one step ahead.  Digging starts on Dirt and
    //    may continue downward (z<0 certifies an in-progress hole, since any
    //    move resets z to 0).  Stone and PlacedBlock are unbreakable.
    if (a.attack) {
        if (st.pitch_deg >= 45) {
            auto here = std::pair<int, int>{st.agent_row, st.agent_col};
            bool on_stack = st.placed_stack.count(here) && st.placed_stack[here] > 0;
            TileKind ground = st.tile(st.agent_row, st.agent_col);
            if (!on_stack && ground == TileKind::Dirt) {
                st.set_tile(st.agent_row, st.agent_col, TileKind::Air);
                st.inventory[static_cast<int>(Material::Dirt)] += 1;
                st.agent_z -= 1;
                ev.push_back({EventKind::Dug, TileKind::Dirt});
            } else if (!on_stack && ground == TileKind::Air && st.agent_z < 0) {
                st.agent_z -= 1;
                ev.push_back({EventKind::Dug, TileKind::Air});
            }
        } else if (st.pitch_deg > -45) {
            int tr = st.agent_row + kDir8Row[round8(st.yaw_deg)];
            int tc = st.agent_col + kDir8Col[round8(st.yaw_deg)];
            if (st.in_bounds(tr, tc)) {
                TileKind t = st.tile(tr, tc);
                if (t == TileKind::Tree || t == TileKind::Grass || t == TileKind::Dirt) {
                    int needed = (t == TileKind::Tree) ? (st.tool_mode == ToolMode::Tool ? 1 : 3) : 1;
                    auto cell = std::pair<int, int>{tr, tc};
                    int hits = ++st.hit_progress[cell];
                    if (hits >= needed) {
                        st.hit_progress.erase(cell);
                        st.set_tile(tr, tc, TileKind::Air);
                        st.inventory[static_cast<int>(tile_material(t))] += 1;
                        ev.push_back({EventKind::Mined, t});
                    } else {
                        ev.push_back({EventKind::Hit, t});
                    }
                }
            }
        }
    }

    // 4. Place: jump + look down + a placeable material stacks a block under
    //    the agent.  Consumption priority: dirt, stone, wood, grass.
    if (a.place && a.jump && st.pitch_deg >= 45) {
        static constexpr Material kPlaceOrder[4] = {Material::Dirt, Material::Stone, Material::Wood,
                                                    Material::Grass};
        for (Material m : kPlaceOrder) {
            if (st.inventory[static_cast<int>(m)] > 0) {
                st.inventory[static_cast<int>(m)] -= 1;
                st.placed_stack[{st.agent_row, st.agent_col}] += 1;
                st.agent_z += 1;
                ev.push_back({EventKind::Placed, TileKind::PlacedBlock});
                break;
            }
        }
    }

    st.step_count += 1;
    st.visited.insert({st.agent_row, st.agent_col});
    return ev;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Egocentric 16x16 frame:
//   row 0         : HUD — all 16 pixels show the pitch bin (pitch+90)/15,
//                   13 bins mapped to palette slots 0..12.
//   rows 2..15    : 7x7 tile window, 2x2 pixels per tile, agent at window
//                   (5,3) (bottom-center, one row of look-behind).  The
//                   window is rotated so "up" is the nearest cardinal to yaw
//                   (ties round clockwise).  Out-of-bounds cells draw Stone.
//   row 1, cols 0..1 : padding (always palette 0).
//   The agent is a fixed 2x2 marker (palette 15) at rows 12..13, cols 8..9.
inline Frame render(const WorldState& st) {
    Frame f;
    uint8_t hud = static_cast<uint8_t>((st.pitch_deg + 90) / 15);
    for (int c = 0; c < kFrameSize; ++c) f.at(0, c) = hud;

    const int card = round4(st.yaw_deg);
    // Forward and right basis vectors for the facing cardinal.
    const int fr = kDir8Row[card * 2], fc = kDir8Col[card * 2];
    const int rr = kDir8Row[(card * 2 + 2) % 8], rc = kDir8Col[(card * 2 + 2) % 8];

    for (int wr = 0; wr < 7; ++wr) {
        for (int wc = 0; wc < 7; ++wc) {
            int ahead = 5 - wr;   // rows above the agent look forward
            int lat = wc - 3;     // columns right of center look right
            int r = st.agent_row + ahead * fr + lat * rr;
            int c = st.agent_col + ahead * fc + lat * rc;
            uint8_t color = st.in_bounds(r, c) ? tile_color(st.tile(r, c)) : tile_color(TileKind::Stone);
            for (int dr = 0; dr < 2; ++dr)
                for (int dc = 0; dc < 2; ++dc) f.at(2 + 2 * wr + dr, 2 + 2 * wc + dc) = color;
        }
    }
    // Agent marker block (window cell (5,3)).
    for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) f.at(12 + dr, 8 + dc) = kAgentColor;
    return f;
}

// ---------------------------------------------------------------------------
// Task metrics
// ---------------------------------------------------------------------------

struct MetricValue {
    double value = 0.0;
    bool success = false;
};

inline MetricValue task_metric(const WorldState& st, const TaskSpec& task) {
    MetricValue m;
    switch (task.kind) {
        case TaskKind::CollectWood:
            m.value = static_cast<double>(st.inventory[static_cast<int>(Material::Wood)]);
            m.success = m.value >= 1.0;
            break;
        case TaskKind::CollectGrass:
            m.value = static_cast<double>(st.inventory[static_cast<int>(Material::Grass)]);
            m.success = m.value >= 1.0;
            break;
        case TaskKind::CollectDirt:
            m.value = static_cast<double>(st.inventory[static_cast<int>(Material::Dirt)]);
            m.success = m.value >= 1.0;
            break;
        case TaskKind::Dig:
            m.success = st.agent_z <= -3;
            m.value = m.success ? 1.0 : 0.0;
            break;
        case TaskKind::Explore:
            m.value = static_cast<double>(st.visited.size());
            m.success = st.visited.size() >= 60;
            break;
        case TaskKind::Tower:
            m.success = st.agent_z >= 4;
            m.value = m.success ? 1.0 : 0.0;
            break;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline ordered_json world_to_json(const WorldState& st) {
    ordered_json j;
    j["size"] = st.size;
    ordered_json grid = ordered_json::array();
    for (TileKind k : st.grid) grid.push_back(static_cast<int>(k));
    j["grid"] = std::move(grid);
    j["agent"] = {{"row", st.agent_row}, {"col", st.agent_col}, {"z", st.agent_z},
                  {"yaw", st.yaw_deg},   {"pitch", st.pitch_deg}};
    ordered_json inv;
    for (int m = 0; m < kMaterials; ++m) inv[material_name(static_cast<Material>(m))] = st.inventory[m];
    j["inventory"] = std::move(inv);
    ordered_json stacks = ordered_json::array();
    for (const auto& [cell, h] : st.placed_stack)
        if (h > 0) stacks.push_back({cell.first, cell.second, h});
    j["placed_stack"] = std::move(stacks);
    ordered_json vis = ordered_json::array();
    for (const auto& [r, c] : st.visited) vis.push_back({r, c});
    j["visited"] = std::move(vis);
    ordered_json hits = ordered_json::array();
    for (const auto& [cell, n] : st.hit_progress) hits.push_back({cell.first, cell.second, n});
    j["hit_progress"] = std::move(hits);
    j["step_count"] = st.step_count;
    j["seed"] = st.seed;
    j["rules"] = {{"peaceful", st.rules.peaceful},
                  {"keep_inventory", st.rules.keep_inventory},
                  {"frozen_daylight", st.rules.frozen_daylight}};
    j["tool_mode"] = tool_mode_name(st.tool_mode);
    j["spawn"] = {{"row", st.spawn_row}, {"col", st.spawn_col}};
    return j;
}

inline WorldState world_from_json(const ordered_json& j) {
    try {
        WorldState st;
        st.size = j.at("size").get<int>();
        const auto& grid = j.at("grid");
        if (static_cast<int>(grid.size()) != st.size * st.size)
            throw DataError("world grid size mismatch");
        st.grid.resize(grid.size());
        for (size_t i = 0; i < grid.size(); ++i) {
            int v = grid[i].get<int>();
            if (v < 0 || v >= kTileKinds) throw DataError("bad tile code");
            st.grid[i] = static_cast<TileKind>(v);
        }
        st.agent_row = j.at("agent").at("row").get<int>();
        st.agent_col = j.at("agent").at("col").get<int>();
        st.agent_z = j.at("agent").at("z").get<int>();
        st.yaw_deg = j.at("agent").at("yaw").get<int>();
        st.pitch_deg = j.at("agent").at("pitch").get<int>();
        for (int m = 0; m < kMaterials; ++m)
            st.inventory[m] = j.at("inventory").at(material_name(static_cast<Material>(m))).get<int64_t>();
        for (const auto& e : j.at("placed_stack"))
            st.placed_stack[{e[0].get<int>(), e[1].get<int>()}] = e[2].get<int>();
        for (const auto& e : j.at("visited")) st.visited.insert({e[0].get<int>(), e[1].get<int>()});
        for (const auto& e : j.at("hit_progress"))
            st.hit_progress[{e[0].get<int>(), e[1].get<int>()}] = e[2].get<int>();
        st.step_count = j.at("step_count").get<int64_t>();
        st.seed = j.at("seed").get<int64_t>();
        st.rules.peaceful = j.at("rules").at("peaceful").get<bool>();
        st.rules.keep_inventory = j.at("rules").at("keep_inventory").get<bool>();
        st.rules.frozen_daylight = j.at("rules").at("frozen_daylight").get<bool>();
        st.tool_mode = tool_mode_from_name(j.at("tool_mode").get<std::string>());
        st.spawn_row = j.at("spawn").at("row").get<int>();
        st.spawn_col = j.at("spawn").at("col").get<int>();
        return st;
    } catch (const ordered_json::exception& e) {
        throw DataError(std::string("world state schema violation: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Instrumented environment handle
// ---------------------------------------------------------------------------

// Wraps a WorldState and counts every interaction.  Dream rollouts flip the
// guard; any environment access while dreaming is a hard logic error, which
// is what the imagination-purity acceptance check leans on.
class Env {
public:
    Env(WorldState st, TaskSpec task) : st_(std::move(st)), task_(task) {}

    EventList step(const ActionCommand& a) {
        check_guard();
        ++access_count_;
        if (st_.step_count >= task_.budget_steps) throw Error("step budget exhausted");
        return rig::step(st_, a);
    }

    Frame render() {
        check_guard();
        ++access_count_;
        return rig::render(st_);
    }

    MetricValue metric() {
        check_guard();
        ++access_count_;
        return task_metric(st_, task_);
    }

    const WorldState& state() {
        check_guard();
        ++access_count_;
        return st_;
    }

    bool budget_left() const { return st_.step_count < task_.budget_steps; }
    const TaskSpec& task() const { return task_; }

    void begin_dream() { dreaming_ = true; }
    void end_dream() { dreaming_ = false; }
    bool dreaming() const { return dreaming_; }
    int64_t access_count() const { return access_count_; }

private:
    void check_guard() const {
        if (dreaming_) throw std::logic_error("environment accessed during dream rollout");
    }

    WorldState st_;
    TaskSpec task_;
    bool dreaming_ = false;
    int64_t access_count_ = 0;
};

}  // namespace rig
