#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "rig/pipeline.hpp"
#include "rig/seqmodel.hpp"

namespace rig {

// ---------------------------------------------------------------------------
// Options and records
// ---------------------------------------------------------------------------

struct TrainOptions {
    OptHyper opt;
    int batch_rows = 4;
    uint64_t data_seed = 42;         // row-sampling stream
    double heldout_fraction = 0.05;  // tail rows reserved for accuracy eval
    double target_action_accuracy = -1.0;  // early stop threshold; <=0 disables
    int eval_every = 100;
    int log_every = 10;
    AblationFlags flags;
};

struct TrainLogEntry {
    int64_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    int64_t masked_token_count = 0;
};

struct TrainResult {
    int64_t steps_run = 0;
    double final_loss = 0.0;
    double final_action_accuracy = -1.0;
    bool early_stopped = false;
    std::vector<TrainLogEntry> log;
};

struct TrainHooks {
    std::function<void(const TrainLogEntry&)> on_log;
    std::function<void(int64_t step, double accuracy)> on_eval;
    std::function<void(int64_t step)> on_snapshot;
    int snapshot_every = 0;  // 0 disables
};

// ---------------------------------------------------------------------------
// Held-out split
// ---------------------------------------------------------------------------

// The split is positional (tail rows are held out) so it is stable across
// runs and config-independent given the same packed dataset.
struct RowSplit {
    int train_rows = 0;
    int heldout_rows = 0;
};

inline RowSplit split_rows(const PackedDataset& ds, double heldout_fraction) {
    int n = static_cast<int>(ds.rows.size());
    if (n == 0) throw DataError("empty packed dataset");
    int held = static_cast<int>(n * heldout_fraction);
    held = std::min(held, n - 1);
    if (held < 0) held = 0;
    return {n - held, held};
}

// ---------------------------------------------------------------------------
// Evaluation: next-action top-1 accuracy
// ---------------------------------------------------------------------------

// Top-1 accuracy over action-span targets in the given rows.  Positions are
// selected by stored role/weight (the prediction of token p+1 counts when it
// is a supervised action token), independent of any ablation flags.
inline double action_accuracy(const Params& params, const PackedDataset& ds,
                              const std::vector<int>& row_ids, Workspace& ws) {
    const int V = params.cfg().vocab;
    int64_t correct = 0, total = 0;
    if (ws.rows.empty()) ws.rows.resize(1);
    for (int id : row_ids) {
        const PackedRow& pr = ds.rows.at(id);
        const int L = static_cast<int>(pr.tokens.size());
        model_detail::forward_row(params, pr.tokens.data(), pr.pos.data(), pr.seg.data(), L, ws,
                                  ws.rows[0]);
        for (int p = 0; p + 1 < L; ++p) {
            if (pr.seg[p + 1] != pr.seg[p] || pr.seg[p] < 0) continue;
            if (pr.weight[p + 1] == 0) continue;
            if (static_cast<TokenRole>(pr.role[p + 1]) != TokenRole::Action) continue;
            const double* lg = ws.rows[0].logits.data() + static_cast<size_t>(p) * V;
            int best = 0;
            for (int v = 1; v < V; ++v)
                if (lg[v] > lg[best]) best = v;
            correct += (best == pr.tokens[p + 1]) ? 1 : 0;
            total += 1;
        }
    }
    return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : -1.0;
}

inline std::vector<int> heldout_row_ids(const PackedDataset&, const RowSplit& sp) {
    std::vector<int> ids;
    for (int i = sp.train_rows; i < sp.train_rows + sp.heldout_rows; ++i) ids.push_back(i);
    return ids;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Runs AdamW steps until total_steps or the accuracy target.  Row sampling
// is keyed on the persisted optimizer step counter, so training N steps,
// checkpointing, and resuming reproduces the uninterrupted run bit for bit.
inline TrainResult train_loop(Params& params, AdamState& adam, const PackedDataset& ds,
                              const TrainOptions& topt, const TrainHooks& hooks = {}) {
    if (static_cast<int>(ds.vocab) != params.cfg().vocab)
        throw ConfigError("dataset vocab does not match model vocab");
    RowSplit sp = split_rows(ds, topt.heldout_fraction);
    std::vector<int> held = heldout_row_ids(ds, sp);
    const bool want_stop = topt.target_action_accuracy > 0.0 && !held.empty();

    Workspace ws;
    Params grads(params.cfg());
    TrainResult res;

    while (adam.t < topt.opt.total_steps) {
        std::vector<int> rows = batch_rows_for_step(sp.train_rows, topt.batch_rows, adam.t, topt.data_seed);
        TrainBatch batch = make_batch(ds, rows, topt.flags);
        double loss;
        try {
            loss = forward_loss(params, batch, ws);
            backward(params, batch, ws, grads);
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(adam.t + 1) + ": " + e.what());
        }
        double norm = opt_step(params, grads, adam, topt.opt);  // advances adam.t

        res.steps_run += 1;
        res.final_loss = loss;
        bool last = adam.t >= topt.opt.total_steps;
        if (topt.log_every > 0 && (adam.t % topt.log_every == 0 || last || adam.t == 1)) {
            TrainLogEntry e{adam.t, loss, norm, lr_at(topt.opt, adam.t), batch.masked_count()};
            res.log.push_back(e);
            if (hooks.on_log) hooks.on_log(e);
        }
        if (hooks.snapshot_every > 0 && hooks.on_snapshot && adam.t % hooks.snapshot_every == 0)
            hooks.on_snapshot(adam.t);

        if (topt.eval_every > 0 && (adam.t % topt.eval_every == 0 || last) && !held.empty()) {
            double acc = action_accuracy(params, ds, held, ws);
            res.final_action_accuracy = acc;
            if (hooks.on_eval) hooks.on_eval(adam.t, acc);
            if (want_stop && acc >= topt.target_action_accuracy) {
                res.early_stopped = true;
                break;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Log serialization
// ---------------------------------------------------------------------------

inline void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    for (const TrainLogEntry& e : log) {
        ordered_json j;
        j["step"] = e.step;
        j["loss"] = e.loss;
        j["grad_norm"] = e.grad_norm;
        j["lr"] = e.lr;
        j["masked_token_count"] = e.masked_token_count;
        out << j.dump() << "\n";
    }
    if (!out.good()) throw DataError("write failed: " + path.string());
}

}  // namespace rig
