#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rig/minegrid.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Shared geometry helpers
// ---------------------------------------------------------------------------

// Signed shortest yaw difference target-current, in (-180, 180], multiple of 5.
inline int signed_yaw_diff(int target, int current) {
    int d = ((target - current) % 360 + 360) % 360;
    return d > 180 ? d - 360 : d;
}

namespace oracle_detail {

constexpr int kInf = std::numeric_limits<int>::max();

// Which tiles a scripted path may traverse.  Pits are always avoided; the
// task's target tile can be excluded so the path stops adjacent to it.
inline bool path_walkable(TileKind k, TileKind excluded) {
    if (k == excluded) return false;
    return k == TileKind::Air || k == TileKind::Grass || k == TileKind::Dirt;
}

// 8-connected BFS distances from (sr,sc) over path-walkable cells.  The
// source cell is always expandable regardless of its own tile (the agent may
// be standing in a dug hole).  Neighbor order is dir8 0..7, so the result is
// deterministic.
inline std::vector<int> bfs_dist(const WorldState& st, int sr, int sc, TileKind excluded) {
    std::vector<int> dist(st.grid.size(), kInf);
    std::deque<std::pair<int, int>> q;
    dist[static_cast<size_t>(sr) * st.size + sc] = 0;
    q.push_back({sr, sc});
    while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop_front();
        int d0 = dist[static_cast<size_t>(r) * st.size + c];
        for (int d = 0; d < 8; ++d) {
            int nr = r + kDir8Row[d], nc = c + kDir8Col[d];
            if (!st.in_bounds(nr, nc)) continue;
            if (!path_walkable(st.tile(nr, nc), excluded)) continue;
            size_t idx = static_cast<size_t>(nr) * st.size + nc;
            if (dist[idx] == kInf) {
                dist[idx] = d0 + 1;
                q.push_back({nr, nc});
            }
        }
    }
    return dist;
}

}  // namespace oracle_detail

// ---------------------------------------------------------------------------
// Expert policy
// ---------------------------------------------------------------------------

struct ExpertDecision {
    bool exhausted = false;     // no reachable way to make progress
    ActionCommand action;
};

// Deterministic scripted expert.  Every phase emits either a camera
// correction (both axes in one tick, each clamped to +-45) or exactly one
// primitive action, so progress follows a strict potential: camera error
// shrinks to zero, then BFS distance-to-goal strictly decreases, then hit
// counters strictly increase.  Tie-breaks are always (distance, row, col)
// for cells and ascending dir8 index for directions.
class Expert {
public:
    static ExpertDecision decide(const WorldState& st, const TaskSpec& task) {
        switch (task.kind) {
            case TaskKind::CollectWood: return collect(st, TileKind::Tree);
            case TaskKind::CollectGrass: return collect(st, TileKind::Grass);
            case TaskKind::CollectDirt: return collect(st, TileKind::Dirt);
            case TaskKind::Dig: return dig(st);
            case TaskKind::Explore: return explore(st);
            case TaskKind::Tower: return tower(st);
        }
        throw Error("bad task kind");
    }

private:
    // Camera-first helper: if yaw/pitch are off target, fix them (one tick,
    // clamped); otherwise run `then`.
    static ExpertDecision face_and(const WorldState& st, int yaw_t, int pitch_t, ActionCommand then) {
        int dy = signed_yaw_diff(yaw_t, st.yaw_deg);
        int dp = pitch_t - st.pitch_deg;
        if (dy != 0 || dp != 0) {
            ActionCommand cam;
            cam.cam_yaw_delta = clamp_int(dy, -45, 45);
            cam.cam_pitch_delta = clamp_int(dp, -45, 45);
            return {false, cam};
        }
        return {false, then};
    }

    // One step along the shortest path to (gr,gc): BFS from the goal, then
    // take the dir8-smallest neighbor that strictly decreases distance.
    static ExpertDecision walk_toward(const WorldState& st, int gr, int gc, TileKind excluded) {
        using oracle_detail::kInf;
        std::vector<int> dg = oracle_detail::bfs_dist(st, gr, gc, excluded);
        int here = dg[static_cast<size_t>(st.agent_row) * st.size + st.agent_col];
        if (here == kInf) return {true, {}};
        for (int d = 0; d < 8; ++d) {
            int nr = st.agent_row + kDir8Row[d], nc = st.agent_col + kDir8Col[d];
            if (!st.in_bounds(nr, nc)) continue;
            if (!oracle_detail::path_walkable(st.tile(nr, nc), excluded)) continue;
            if (dg[static_cast<size_t>(nr) * st.size + nc] < here) {
                ActionCommand fwd;
                fwd.forward = true;
                return face_and(st, d * 45, 0, fwd);
            }
        }
        return {true, {}};  // cannot be reached from BFS invariants, kept total
    }

    // Nearest goal cell among `goals` by (BFS distance, row, col); nullopt if
    // none is reachable.
    static std::optional<std::pair<int, int>> nearest(const WorldState& st,
                                                      const std::vector<std::pair<int, int>>& goals,
                                                      TileKind excluded) {
        using oracle_detail::kInf;
        std::vector<int> dist = oracle_detail::bfs_dist(st, st.agent_row, st.agent_col, excluded);
        std::optional<std::pair<int, int>> best;
        int best_d = kInf;
        for (auto [r, c] : goals) {
            int d = dist[static_cast<size_t>(r) * st.size + c];
            if (d == kInf) continue;
            if (d < best_d || (d == best_d && std::pair{r, c} < *best)) {
                best_d = d;
                best = {r, c};
            }
        }
        return best;
    }

    // Collect: face + strike the nearest adjacent target tile; otherwise walk
    // to the cell adjacent to the nearest target.  Grass/Dirt targets are
    // treated as path obstacles so the expert harvests them from outside.
    static ExpertDecision collect(const WorldState& st, TileKind target) {
        TileKind excluded = (target == TileKind::Grass || target == TileKind::Dirt) ? target : TileKind::Air;
        if (excluded == TileKind::Air) excluded = TileKind::PlacedBlock;  // sentinel: exclude nothing walkable

        // Adjacent target (tie: smaller row, then col).
        std::optional<std::pair<int, int>> adj;
        int adj_dir = -1;
        for (int d = 0; d < 8; ++d) {
            int nr = st.agent_row + kDir8Row[d], nc = st.agent_col + kDir8Col[d];
            if (st.in_bounds(nr, nc) && st.tile(nr, nc) == target) {
                if (!adj || std::pair{nr, nc} < *adj) {
                    adj = {{nr, nc}};
                    adj_dir = d;
                }
            }
        }
        if (adj) {
            ActionCommand hit;
            hit.attack = true;
            return face_and(st, adj_dir * 45, 0, hit);
        }

        // Approach: nearest target by (min adjacent-cell distance, row, col).
        using oracle_detail::kInf;
        std::vector<int> dist = oracle_detail::bfs_dist(st, st.agent_row, st.agent_col, excluded);
        std::optional<std::pair<int, int>> best_t;
        std::optional<std::pair<int, int>> best_goal;
        int best_d = kInf;
        for (int r = 0; r < st.size; ++r) {
            for (int c = 0; c < st.size; ++c) {
                if (st.tile(r, c) != target) continue;
                int td = kInf;
                std::optional<std::pair<int, int>> goal;
                for (int d = 0; d < 8; ++d) {
                    int nr = r + kDir8Row[d], nc = c + kDir8Col[d];
                    if (!st.in_bounds(nr, nc)) continue;
                    if (!oracle_detail::path_walkable(st.tile(nr, nc), excluded)) continue;
                    int dd = dist[static_cast<size_t>(nr) * st.size + nc];
                    if (dd < td || (dd == td && goal && std::pair{nr, nc} < *goal)) {
                        td = dd;
                        goal = {{nr, nc}};
                    }
                }
                if (td == kInf) continue;
                if (td < best_d || (td == best_d && best_t && std::pair{r, c} < *best_t)) {
                    best_d = td;
                    best_t = {{r, c}};
                    best_goal = goal;
                }
            }
        }
        if (!best_goal) return {true, {}};
        return walk_toward(st, best_goal->first, best_goal->second, excluded);
    }

    // Dig: stand on Dirt (or in an in-progress hole), look down, strike.
    static ExpertDecision dig(const WorldState& st) {
        auto here = std::pair<int, int>{st.agent_row, st.agent_col};
        bool on_stack = st.placed_stack.count(here) && st.placed_stack.at(here) > 0;
        bool can_dig = !on_stack && (st.tile(st.agent_row, st.agent_col) == TileKind::Dirt ||
                                     (st.tile(st.agent_row, st.agent_col) == TileKind::Air && st.agent_z < 0));
        if (can_dig) {
            ActionCommand hit;
            hit.attack = true;
            return face_and(st, st.yaw_deg, 45, hit);
        }
        std::vector<std::pair<int, int>> goals;
        for (int r = 0; r < st.size; ++r)
            for (int c = 0; c < st.size; ++c)
                if (st.tile(r, c) == TileKind::Dirt) goals.push_back({r, c});
        auto g = nearest(st, goals, TileKind::PlacedBlock);
        if (!g) return {true, {}};
        return walk_toward(st, g->first, g->second, TileKind::PlacedBlock);
    }

    // Explore: walk to the nearest reachable unvisited walkable cell.
    static ExpertDecision explore(const WorldState& st) {
        std::vector<std::pair<int, int>> goals;
        for (int r = 0; r < st.size; ++r)
            for (int c = 0; c < st.size; ++c)
                if (oracle_detail::path_walkable(st.tile(r, c), TileKind::PlacedBlock) &&
                    !st.visited.count({r, c}))
                    goals.push_back({r, c});
        auto g = nearest(st, goals, TileKind::PlacedBlock);
        if (!g) return {true, {}};
        return walk_toward(st, g->first, g->second, TileKind::PlacedBlock);
    }

    // Tower: gather blocks until enough remain to finish, then look down and
    // jump-place without ever moving off the stack.
    static ExpertDecision tower(const WorldState& st) {
        int needed = 4 - st.agent_z;
        if (needed <= 0) return {false, {}};  // already succeeded; idle
        int have = std::accumulate(st.inventory.begin(), st.inventory.end(), 0);
        if (have >= needed) {
            ActionCommand up;
            up.jump = true;
            up.place = true;
            return face_and(st, st.yaw_deg, 45, up);
        }
        return collect(st, TileKind::Dirt);
    }
};

// ---------------------------------------------------------------------------
// Reasoner
// ---------------------------------------------------------------------------

inline const char* entity_word(TileKind k) {
    switch (k) {
        case TileKind::Tree: return "Tree";
        case TileKind::Grass: return "Grass";
        case TileKind::Dirt: return "Dirt";
        case TileKind::Stone: return "Stone";
        case TileKind::Pit: return "Pit";
        case TileKind::PlacedBlock: return "Block";
        case TileKind::Air: break;
    }
    throw Error("no entity word for tile");
}

// Egocentric observation window: ahead in [-1,5], lateral in [-3,3] relative
// to the facing cardinal (same basis the renderer uses).
struct WindowHit {
    int ahead = 0, lat = 0;   // window coordinates
    int row = 0, col = 0;     // world coordinates
    int cheb = 0;             // Chebyshev distance in window coordinates
};

// Nearest in-window tile of the given kind, excluding the agent cell.
// Tie-break: smaller Chebyshev distance, then world row, then world col.
inline std::optional<WindowHit> nearest_in_window(const WorldState& st, TileKind kind) {
    const int card = round4(st.yaw_deg);
    const int fr = kDir8Row[card * 2], fc = kDir8Col[card * 2];
    const int rr = kDir8Row[(card * 2 + 2) % 8], rc = kDir8Col[(card * 2 + 2) % 8];
    std::optional<WindowHit> best;
    for (int ahead = -1; ahead <= 5; ++ahead) {
        for (int lat = -3; lat <= 3; ++lat) {
            if (ahead == 0 && lat == 0) continue;
            int r = st.agent_row + ahead * fr + lat * rr;
            int c = st.agent_col + ahead * fc + lat * rc;
            if (!st.in_bounds(r, c) || st.tile(r, c) != kind) continue;
            WindowHit h{ahead, lat, r, c, std::max(std::abs(ahead), std::abs(lat))};
            if (!best || h.cheb < best->cheb ||
                (h.cheb == best->cheb && std::pair{h.row, h.col} < std::pair{best->row, best->col}))
                best = h;
        }
    }
    return best;
}

// Total sector rule over window cells (excluding the origin): ahead/behind
// win ties against left/right.
inline const char* sector_name(int ahead, int lat) {
    if (ahead > 0 && ahead >= std::abs(lat)) return "ahead";
    if (ahead < 0 && -ahead >= std::abs(lat)) return "behind";
    return lat > 0 ? "right" : "left";
}

// Scripted natural-language rationale for taking `a` in state `st`:
//   "a <Entity> is <k> tiles <dir> ; <action phrase>"   (target in window)
//   "a Dirt is 0 tiles below ; digging down"            (dig strike)
//   "no target visible ; <action phrase>"               (otherwise)
// The entity clause names the task's target tile; Explore has no entity
// target and always uses the no-target form.
inline std::vector<std::string> reasoner(const WorldState& st, const TaskSpec& task,
                                         const ActionCommand& a) {
    const int dp = clamp_int(round_mult5(a.cam_pitch_delta), -45, 45);
    const int dy = clamp_int(round_mult5(a.cam_yaw_delta), -45, 45);
    const int eff_pitch = clamp_int(st.pitch_deg + dp, -90, 90);

    // Action phrase (first match wins; total over all commands).
    std::vector<std::string> phrase;
    bool dig_strike = false;
    if (a.place && a.jump && eff_pitch >= 45) phrase = {"building", "up"};
    else if (a.attack && eff_pitch >= 45) {
        phrase = {"digging", "down"};
        dig_strike = true;
    } else if (a.attack) phrase = {"attacking", "it"};
    else if (dy != 0) phrase = {"turning", dy > 0 ? "right" : "left"};
    else if (dp != 0) phrase = {"looking", dp > 0 ? "down" : "up"};
    else if (a.forward) phrase = {"moving", "forward"};
    else if (a.back) phrase = {"stepping", "back"};
    else if (a.left) phrase = {"stepping", "left"};
    else if (a.right) phrase = {"stepping", "right"};
    else if (a.jump) phrase = {"jumping"};
    else phrase = {"waiting"};

    std::vector<std::string> out;
    if (dig_strike) {
        out = {"a", "Dirt", "is", "0", "tiles", "below", ";"};
    } else if (task.kind != TaskKind::Explore) {
        auto hit = nearest_in_window(st, task_target_tile(task.kind));
        if (hit) {
            out = {"a",
                   entity_word(task_target_tile(task.kind)),
                   "is",
                   std::to_string(hit->cheb),
                   "tiles",
                   sector_name(hit->ahead, hit->lat),
                   ";"};
        } else {
            out = {"no", "target", "visible", ";"};
        }
    } else {
        out = {"no", "target", "visible", ";"};
    }
    out.insert(out.end(), phrase.begin(), phrase.end());
    return out;
}

// ---------------------------------------------------------------------------
// Reviewer
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& trigger_phrase() {
    static const std::vector<std::string> kTrigger = {"Wait", "!", "Let's", "re-observe", "..."};
    return kTrigger;
}

struct ReviewComposition {
    std::vector<std::string> words;  // Y- prefix, trigger, Y+
    int neg_len = 0;                 // word count of the loss-masked Y- prefix
};

// Builds the reflective rationale of an RFT turn: the last up-to-`max_neg_turns`
// rationales that led the diverging rollout astray, the re-observe trigger,
// then the corrective rationale.  Only the corrective part (trigger included)
// carries loss weight; neg_len marks the boundary.
inline ReviewComposition compose_review(const std::vector<std::vector<std::string>>& neg_rationales,
                                        const std::vector<std::string>& positive_rationale,
                                        int max_neg_turns = 4) {
    ReviewComposition rc;
    size_t take = std::min<size_t>(neg_rationales.size(), static_cast<size_t>(std::max(0, max_neg_turns)));
    for (size_t i = neg_rationales.size() - take; i < neg_rationales.size(); ++i)
        rc.words.insert(rc.words.end(), neg_rationales[i].begin(), neg_rationales[i].end());
    rc.neg_len = static_cast<int>(rc.words.size());
    const auto& trig = trigger_phrase();
    rc.words.insert(rc.words.end(), trig.begin(), trig.end());
    rc.words.insert(rc.words.end(), positive_rationale.begin(), positive_rationale.end());
    return rc;
}

// First index at which two action sequences differ; nullopt if one is a
// prefix of the other and no position differs.
inline std::optional<size_t> first_divergence(const std::vector<ActionCommand>& a,
                                              const std::vector<ActionCommand>& b) {
    size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i)
        if (!(a[i] == b[i])) return i;
    return std::nullopt;
}

}  // namespace rig
