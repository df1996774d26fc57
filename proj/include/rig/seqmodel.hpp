#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rig/error.hpp"
#include "rig/rng.hpp"
#include "rig/tensor.hpp"
#include "rig/version.hpp"

namespace rig {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------------------
// Configuration and parameter arena
// ---------------------------------------------------------------------------

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int context_len = 1024;
    int vocab = 0;
    double init_std = 0.02;
    uint64_t init_seed = 0;

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || context_len < 1 || vocab < 1)
            throw ConfigError("model dimensions must be positive");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    }

    int head_dim() const { return d_model / n_heads; }
    bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
    bool matrix = false;  // participates in weight decay
};

// Flat f64 arena with a fixed, documented tensor order (this order is the
// checkpoint serialization order):
//   tok_emb [V,d], pos_emb [ctx,d],
//   per layer: ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2,
//   lnf_g, lnf_b.
// The output projection is tied to tok_emb.
class Params {
public:
    explicit Params(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const size_t d = cfg.d_model, ff = cfg.d_ff;
        auto add = [&](std::string name, size_t count, bool matrix) {
            specs_.push_back({std::move(name), total_, count, matrix});
            total_ += count;
        };
        add("tok_emb", static_cast<size_t>(cfg.vocab) * d, true);
        add("pos_emb", static_cast<size_t>(cfg.context_len) * d, true);
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            add(p + "ln1_g", d, false);
            add(p + "ln1_b", d, false);
            add(p + "wq", d * d, true);
            add(p + "wk", d * d, true);
            add(p + "wv", d * d, true);
            add(p + "wo", d * d, true);
            add(p + "ln2_g", d, false);
            add(p + "ln2_b", d, false);
            add(p + "w1", d * ff, true);
            add(p + "b1", ff, false);
            add(p + "w2", ff * d, true);
            add(p + "b2", d, false);
        }
        add("lnf_g", d, false);
        add("lnf_b", d, false);
        data_.assign(total_, 0.0);
    }

    const ModelConfig& cfg() const { return cfg_; }
    size_t size() const { return total_; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    const std::vector<TensorSpec>& tensors() const { return specs_; }

    double* ptr(size_t spec) { return data_.data() + specs_[spec].offset; }
    const double* ptr(size_t spec) const { return data_.data() + specs_[spec].offset; }

    double* tok_emb() { return ptr(0); }
    const double* tok_emb() const { return ptr(0); }
    double* pos_emb() { return ptr(1); }
    const double* pos_emb() const { return ptr(1); }
    double* lnf_g() { return ptr(2 + 12 * static_cast<size_t>(cfg_.n_layers)); }
    const double* lnf_g() const { return ptr(2 + 12 * static_cast<size_t>(cfg_.n_layers)); }
    double* lnf_b() { return ptr(3 + 12 * static_cast<size_t>(cfg_.n_layers)); }
    const double* lnf_b() const { return ptr(3 + 12 * static_cast<size_t>(cfg_.n_layers)); }

    struct LayerView {
        double *ln1_g, *ln1_b, *wq, *wk, *wv, *wo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };
    struct ConstLayerView {
        const double *ln1_g, *ln1_b, *wq, *wk, *wv, *wo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };

    LayerView layer(int l) {
        size_t b = 2 + 12 * static_cast<size_t>(l);
        return {ptr(b),     ptr(b + 1), ptr(b + 2), ptr(b + 3), ptr(b + 4),  ptr(b + 5),
                ptr(b + 6), ptr(b + 7), ptr(b + 8), ptr(b + 9), ptr(b + 10), ptr(b + 11)};
    }
    ConstLayerView layer(int l) const {
        size_t b = 2 + 12 * static_cast<size_t>(l);
        return {ptr(b),     ptr(b + 1), ptr(b + 2), ptr(b + 3), ptr(b + 4),  ptr(b + 5),
                ptr(b + 6), ptr(b + 7), ptr(b + 8), ptr(b + 9), ptr(b + 10), ptr(b + 11)};
    }

    void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

    // Gaussian init for matrices (std = cfg.init_std), gains 1, biases 0.
    // A single RNG stream runs over the arena in tensor order.
    void init_gaussian() {
        Rng r(split(cfg_.init_seed, "init"));
        for (const auto& s : specs_) {
            double* p = data_.data() + s.offset;
            if (s.matrix) {
                for (size_t i = 0; i < s.count; ++i) p[i] = cfg_.init_std * r.next_gaussian();
            } else if (s.name.ends_with("_g")) {
                std::fill(p, p + s.count, 1.0);
            } else {
                std::fill(p, p + s.count, 0.0);
            }
        }
    }

private:
    ModelConfig cfg_;
    std::vector<TensorSpec> specs_;
    std::vector<double> data_;
    size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

// All arrays are rows*len, row-major.  `seg` gives the packing segment id of
// each position (pad positions use -1); positions restart at 0 at every
// segment start, and attention never crosses a segment boundary.  `mask` is
// the loss weight of predicting `targets[i]` from position i.
struct TrainBatch {
    int rows = 0, len = 0;
    std::vector<int32_t> tokens, targets, pos, seg;
    std::vector<uint8_t> mask;

    int64_t masked_count() const {
        int64_t n = 0;
        for (uint8_t m : mask) n += m;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Forward / loss / backward
// ---------------------------------------------------------------------------

namespace model_detail {

inline constexpr double kLnEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // N(0,1) pdf
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) + x * phi;
}

// y = g*xhat + b with xhat = (x-mu)*rstd, rstd = 1/sqrt(var + eps).
inline void layer_norm(const double* x, const double* g, const double* b, int d, double* y,
                       double* xhat, double* rstd_out) {
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double dv = x[i] - mu;
        var += dv * dv;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < d; ++i) {
        double xh = (x[i] - mu) * rstd;
        xhat[i] = xh;
        y[i] = g[i] * xh + b[i];
    }
    *rstd_out = rstd;
}

// dx = rstd*(dxhat - mean(dxhat) - xhat*mean(dxhat.xhat)); accumulates dg, db.
inline void layer_norm_backward(const double* dy, const double* xhat, double rstd, const double* g,
                                int d, double* dx, double* dg, double* db) {
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < d; ++i) {
        double dxh = dy[i] * g[i];
        m1 += dxh;
        m2 += dxh * xhat[i];
    }
    m1 /= d;
    m2 /= d;
    for (int i = 0; i < d; ++i) {
        double dxh = dy[i] * g[i];
        dx[i] = rstd * (dxh - m1 - xhat[i] * m2);
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
    }
}

// Per-row activation cache; arrays are stacked per layer.
struct RowCache {
    int len = 0;
    std::vector<double> x;      // (nl+1) * L*d : input of each layer; slot nl = final pre-LN
    std::vector<double> xhat1;  // nl * L*d
    std::vector<double> rstd1;  // nl * L
    std::vector<double> q, k, v;       // nl * L*d
    std::vector<double> probs;         // nl * H * L*L
    std::vector<double> attnc;         // nl * L*d (pre-Wo head concat)
    std::vector<double> xhat2;         // nl * L*d
    std::vector<double> rstd2;         // nl * L
    std::vector<double> h1;            // nl * L*ff (pre-activation)
    std::vector<double> gact;          // nl * L*ff
    std::vector<double> xhatf, rstdf;  // L*d, L
    std::vector<double> logits;        // L*V
    std::vector<int> seg_start;        // L

    void resize(const ModelConfig& c, int L) {
        len = L;
        size_t ld = static_cast<size_t>(L) * c.d_model;
        size_t lf = static_cast<size_t>(L) * c.d_ff;
        size_t nl = c.n_layers;
        x.assign((nl + 1) * ld, 0.0);
        xhat1.assign(nl * ld, 0.0);
        rstd1.assign(nl * static_cast<size_t>(L), 0.0);
        q.assign(nl * ld, 0.0);
        k.assign(nl * ld, 0.0);
        v.assign(nl * ld, 0.0);
        probs.assign(nl * static_cast<size_t>(c.n_heads) * L * L, 0.0);
        attnc.assign(nl * ld, 0.0);
        xhat2.assign(nl * ld, 0.0);
        rstd2.assign(nl * static_cast<size_t>(L), 0.0);
        h1.assign(nl * lf, 0.0);
        gact.assign(nl * lf, 0.0);
        xhatf.assign(ld, 0.0);
        rstdf.assign(L, 0.0);
        logits.assign(static_cast<size_t>(L) * c.vocab, 0.0);
        seg_start.assign(L, 0);
    }
};

}  // namespace model_detail

// Scratch buffers shared across rows plus per-row caches.
struct Workspace {
    std::vector<model_detail::RowCache> rows;
    std::vector<double> et;  // [d,V] transposed embeddings
    std::vector<double> s1, s2, s3, s4, s5, s6;

    double* buf(std::vector<double>& b, size_t n) {
        if (b.size() < n) b.resize(n);
        return b.data();
    }
};

namespace model_detail {

// Forward pass for one packed row; fills the cache including logits.
inline void forward_row(const Params& P, const int32_t* tokens, const int32_t* pos,
                        const int32_t* seg, int L, Workspace& ws, RowCache& rc) {
    const ModelConfig& c = P.cfg();
    const int d = c.d_model, H = c.n_heads, hd = c.head_dim(), ff = c.d_ff, V = c.vocab;
    const size_t ld = static_cast<size_t>(L) * d;
    rc.resize(c, L);

    for (int i = 0; i < L; ++i) {
        if (tokens[i] < 0 || tokens[i] >= V) throw DataError("token id out of vocab range");
        if (pos[i] < 0 || pos[i] >= c.context_len) throw DataError("position exceeds context_len");
        rc.seg_start[i] = (i > 0 && seg[i] == seg[i - 1]) ? rc.seg_start[i - 1] : i;
        const double* te = P.tok_emb() + static_cast<size_t>(tokens[i]) * d;
        const double* pe = P.pos_emb() + static_cast<size_t>(pos[i]) * d;
        double* xr = rc.x.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    double* qh = ws.buf(ws.s1, static_cast<size_t>(L) * hd);
    double* kht = ws.buf(ws.s2, static_cast<size_t>(hd) * L);
    double* vh = ws.buf(ws.s3, static_cast<size_t>(L) * hd);
    double* oh = ws.buf(ws.s4, static_cast<size_t>(L) * hd);
    double* kh = ws.buf(ws.s5, static_cast<size_t>(L) * hd);

    for (int l = 0; l < c.n_layers; ++l) {
        auto W = P.layer(l);
        const double* xin = rc.x.data() + static_cast<size_t>(l) * ld;
        double* xh1 = rc.xhat1.data() + static_cast<size_t>(l) * ld;
        double* q = rc.q.data() + static_cast<size_t>(l) * ld;
        double* k = rc.k.data() + static_cast<size_t>(l) * ld;
        double* v = rc.v.data() + static_cast<size_t>(l) * ld;
        double* attnc = rc.attnc.data() + static_cast<size_t>(l) * ld;
        double* xh2 = rc.xhat2.data() + static_cast<size_t>(l) * ld;
        double* h1 = rc.h1.data() + static_cast<size_t>(l) * static_cast<size_t>(L) * ff;
        double* ga = rc.gact.data() + static_cast<size_t>(l) * static_cast<size_t>(L) * ff;
        double* xout = rc.x.data() + static_cast<size_t>(l + 1) * ld;

        // ln1 (normalized output reuses the xhat buffer, then q/k/v read it)
        std::vector<double>& ln1buf = ws.s6;
        double* y1 = ws.buf(ln1buf, ld);
        for (int i = 0; i < L; ++i)
            layer_norm(xin + static_cast<size_t>(i) * d, W.ln1_g, W.ln1_b, d, y1 + static_cast<size_t>(i) * d,
                       xh1 + static_cast<size_t>(i) * d, &rc.rstd1[static_cast<size_t>(l) * L + i]);

        matmul(y1, W.wq, q, L, d, d);
        matmul(y1, W.wk, k, L, d, d);
        matmul(y1, W.wv, v, L, d, d);

        for (int h = 0; h < H; ++h) {
            for (int i = 0; i < L; ++i) {
                std::memcpy(qh + static_cast<size_t>(i) * hd, q + static_cast<size_t>(i) * d + h * hd,
                            sizeof(double) * hd);
                std::memcpy(kh + static_cast<size_t>(i) * hd, k + static_cast<size_t>(i) * d + h * hd,
                            sizeof(double) * hd);
                std::memcpy(vh + static_cast<size_t>(i) * hd, v + static_cast<size_t>(i) * d + h * hd,
                            sizeof(double) * hd);
            }
            transpose(kh, kht, L, hd);
            double* pr = rc.probs.data() +
                         (static_cast<size_t>(l) * H + h) * static_cast<size_t>(L) * L;
            matmul(qh, kht, pr, L, hd, L);
            // causal + segment softmax; excluded positions hold probability 0
            for (int i = 0; i < L; ++i) {
                double* row = pr + static_cast<size_t>(i) * L;
                int s0 = rc.seg_start[i];
                double mx = -1e300;
                for (int j = s0; j <= i; ++j) {
                    row[j] *= scale;
                    if (row[j] > mx) mx = row[j];
                }
                double z = 0.0;
                for (int j = s0; j <= i; ++j) z += std::exp(row[j] - mx);
                for (int j = 0; j < s0; ++j) row[j] = 0.0;
                for (int j = s0; j <= i; ++j) row[j] = std::exp(row[j] - mx) / z;
                for (int j = i + 1; j < L; ++j) row[j] = 0.0;
            }
            // out = probs x Vh, accumulated only over the valid causal/segment
            // range (j ascending per element, matching the decoder exactly).
            std::memset(oh, 0, sizeof(double) * static_cast<size_t>(L) * hd);
            for (int i = 0; i < L; ++i) {
                double* orow = oh + static_cast<size_t>(i) * hd;
                const double* prow = pr + static_cast<size_t>(i) * L;
                for (int j = rc.seg_start[i]; j <= i; ++j) {
                    const double pv = prow[j];
                    const double* vrow = vh + static_cast<size_t>(j) * hd;
                    for (int dd = 0; dd < hd; ++dd) orow[dd] += pv * vrow[dd];
                }
            }
            for (int i = 0; i < L; ++i)
                std::memcpy(attnc + static_cast<size_t>(i) * d + h * hd, oh + static_cast<size_t>(i) * hd,
                            sizeof(double) * hd);
        }

        // attention projection + residual
        matmul(attnc, W.wo, xout, L, d, d);
        for (size_t i = 0; i < ld; ++i) xout[i] += xin[i];

        // ln2 + feed-forward + residual (xout updated in place)
        double* y2 = ws.buf(ln1buf, ld);
        for (int i = 0; i < L; ++i)
            layer_norm(xout + static_cast<size_t>(i) * d, W.ln2_g, W.ln2_b, d,
                       y2 + static_cast<size_t>(i) * d, xh2 + static_cast<size_t>(i) * d,
                       &rc.rstd2[static_cast<size_t>(l) * L + i]);
        matmul(y2, W.w1, h1, L, d, ff);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < ff; ++j) h1[static_cast<size_t>(i) * ff + j] += W.b1[j];
        for (size_t i = 0; i < static_cast<size_t>(L) * ff; ++i) ga[i] = gelu(h1[i]);
        double* fbuf = ws.buf(ws.s6, ld);
        matmul(ga, W.w2, fbuf, L, ff, d);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < d; ++j)
                xout[static_cast<size_t>(i) * d + j] += fbuf[static_cast<size_t>(i) * d + j] + W.b2[j];
    }

    // final norm + tied logits
    const double* xl = rc.x.data() + static_cast<size_t>(c.n_layers) * ld;
    double* yf = ws.buf(ws.s6, ld);
    for (int i = 0; i < L; ++i)
        layer_norm(xl + static_cast<size_t>(i) * d, P.lnf_g(), P.lnf_b(), d,
                   yf + static_cast<size_t>(i) * d, rc.xhatf.data() + static_cast<size_t>(i) * d,
                   &rc.rstdf[i]);
    double* et = ws.buf(ws.et, static_cast<size_t>(d) * V);
    transpose(P.tok_emb(), et, V, d);
    matmul(yf, et, rc.logits.data(), L, d, V);
    // keep the normalized output for backward (reuse xhatf slot? xhatf holds xhat; we also need y_f)
    // y_f is recomputable from xhatf and lnf params; store nothing extra.
}

// Cross-entropy over masked positions of one row; returns (sum, count).
inline void row_loss(const RowCache& rc, const int32_t* targets, const uint8_t* mask, int V,
                     double* loss_sum, int64_t* n_masked) {
    for (int i = 0; i < rc.len; ++i) {
        if (!mask[i]) continue;
        const double* lr = rc.logits.data() + static_cast<size_t>(i) * V;
        int t = targets[i];
        if (t < 0 || t >= V) throw DataError("target id out of vocab range");
        double mx = lr[0];
        for (int vv = 1; vv < V; ++vv)
            if (lr[vv] > mx) mx = lr[vv];
        double z = 0.0;
        for (int vv = 0; vv < V; ++vv) z += std::exp(lr[vv] - mx);
        *loss_sum += -(lr[t] - mx - std::log(z));
        *n_masked += 1;
    }
}

}  // namespace model_detail

// Mean cross-entropy over all masked positions of the batch (denominator
// max(1, #masked)).  Fills ws.rows with the activation caches backward needs.
inline double forward_loss(const Params& P, const TrainBatch& b, Workspace& ws) {
    const ModelConfig& c = P.cfg();
    if (b.len > c.context_len) throw DataError("batch length exceeds context_len");
    if (static_cast<size_t>(ws.rows.size()) < static_cast<size_t>(b.rows)) ws.rows.resize(b.rows);
    double loss_sum = 0.0;
    int64_t n = 0;
    for (int r = 0; r < b.rows; ++r) {
        size_t off = static_cast<size_t>(r) * b.len;
        model_detail::forward_row(P, b.tokens.data() + off, b.pos.data() + off, b.seg.data() + off,
                                  b.len, ws, ws.rows[r]);
        model_detail::row_loss(ws.rows[r], b.targets.data() + off, b.mask.data() + off, c.vocab,
                               &loss_sum, &n);
    }
    double denom = static_cast<double>(n > 0 ? n : 1);
    double loss = loss_sum / denom;
    if (!std::isfinite(loss)) {
        // locate the first non-finite activation for provenance
        for (int r = 0; r < b.rows; ++r) {
            const auto& rc = ws.rows[r];
            for (int l = 0; l <= c.n_layers; ++l) {
                size_t ld = static_cast<size_t>(b.len) * c.d_model;
                for (size_t i = 0; i < ld; ++i)
                    if (!std::isfinite(rc.x[static_cast<size_t>(l) * ld + i]))
                        throw NumericError("non-finite activation at layer " + std::to_string(l));
            }
        }
        throw NumericError("non-finite loss at output head");
    }
    return loss;
}

// Exact gradient of forward_loss wrt every parameter.  Must be called right
// after forward_loss on the same batch/workspace.  Zeroes `grads` first.
inline void backward(const Params& P, const TrainBatch& b, Workspace& ws, Params& grads) {
    using namespace model_detail;
    const ModelConfig& c = P.cfg();
    const int d = c.d_model, H = c.n_heads, hd = c.head_dim(), ff = c.d_ff, V = c.vocab, L = b.len;
    const size_t ld = static_cast<size_t>(L) * d;
    grads.zero();

    int64_t n = b.masked_count();
    const double denom = static_cast<double>(n > 0 ? n : 1);

    std::vector<double> dlogits(static_cast<size_t>(L) * V);
    std::vector<double> dx(ld), dxtmp(ld), dq(ld), dk(ld), dv(ld), dattnc(ld);
    std::vector<double> dh1(static_cast<size_t>(L) * ff), dg(static_cast<size_t>(L) * ff);
    std::vector<double> yb(ld);  // rebuilt LN outputs
    std::vector<double> wt(static_cast<size_t>(std::max(d * std::max(d, ff), V * d)));
    std::vector<double> mt(static_cast<size_t>(L) * std::max({L, d, ff, V}));
    std::vector<double> qh(static_cast<size_t>(L) * hd), kh(static_cast<size_t>(L) * hd),
        vh(static_cast<size_t>(L) * hd), dOh(static_cast<size_t>(L) * hd),
        dP(static_cast<size_t>(L) * L), dS(static_cast<size_t>(L) * L),
        tLL(static_cast<size_t>(L) * L), dQh(static_cast<size_t>(L) * hd),
        dKh(static_cast<size_t>(L) * hd), dVh(static_cast<size_t>(L) * hd);

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (int r = 0; r < b.rows; ++r) {
        const RowCache& rc = ws.rows[r];
        size_t off = static_cast<size_t>(r) * L;
        const int32_t* tokens = b.tokens.data() + off;
        const int32_t* pos = b.pos.data() + off;
        const int32_t* targets = b.targets.data() + off;
        const uint8_t* mask = b.mask.data() + off;

        // dlogits = mask/denom * (softmax - onehot)
        std::fill(dlogits.begin(), dlogits.end(), 0.0);
        for (int i = 0; i < L; ++i) {
            if (!mask[i]) continue;
            const double* lr = rc.logits.data() + static_cast<size_t>(i) * V;
            double* dlr = dlogits.data() + static_cast<size_t>(i) * V;
            double mx = lr[0];
            for (int vv = 1; vv < V; ++vv)
                if (lr[vv] > mx) mx = lr[vv];
            double z = 0.0;
            for (int vv = 0; vv < V; ++vv) z += std::exp(lr[vv] - mx);
            for (int vv = 0; vv < V; ++vv) dlr[vv] = std::exp(lr[vv] - mx) / z / denom;
            dlr[targets[i]] -= 1.0 / denom;
        }

        // logits = y_f x E^T :  dy_f = dlogits x E ;  dE += dlogits^T x y_f
        double* yf = yb.data();
        for (int i = 0; i < L; ++i) {
            const double* xh = rc.xhatf.data() + static_cast<size_t>(i) * d;
            double* y = yf + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) y[j] = P.lnf_g()[j] * xh[j] + P.lnf_b()[j];
        }
        matmul(dlogits.data(), P.tok_emb(), dxtmp.data(), L, V, d);  // dy_f
        transpose(dlogits.data(), mt.data(), L, V);                  // [V,L]
        matmul(mt.data(), yf, wt.data(), V, L, d);
        {
            double* dE = grads.tok_emb();
            for (size_t i = 0; i < static_cast<size_t>(V) * d; ++i) dE[i] += wt[i];
        }
        // final LN backward
        const double* xl = rc.x.data() + static_cast<size_t>(c.n_layers) * ld;
        (void)xl;
        std::fill(dx.begin(), dx.end(), 0.0);
        for (int i = 0; i < L; ++i)
            layer_norm_backward(dxtmp.data() + static_cast<size_t>(i) * d,
                                rc.xhatf.data() + static_cast<size_t>(i) * d, rc.rstdf[i], P.lnf_g(), d,
                                dx.data() + static_cast<size_t>(i) * d, grads.lnf_g(), grads.lnf_b());

        for (int l = c.n_layers - 1; l >= 0; --l) {
            auto W = P.layer(l);
            auto G = grads.layer(l);
            const double* xh2 = rc.xhat2.data() + static_cast<size_t>(l) * ld;
            const double* h1 = rc.h1.data() + static_cast<size_t>(l) * static_cast<size_t>(L) * ff;
            const double* ga = rc.gact.data() + static_cast<size_t>(l) * static_cast<size_t>(L) * ff;
            const double* xh1 = rc.xhat1.data() + static_cast<size_t>(l) * ld;
            const double* q = rc.q.data() + static_cast<size_t>(l) * ld;
            const double* k = rc.k.data() + static_cast<size_t>(l) * ld;
            const double* v = rc.v.data() + static_cast<size_t>(l) * ld;
            const double* attnc = rc.attnc.data() + static_cast<size_t>(l) * ld;

            // ---- feed-forward block: x2 = x1 + gelu(LN(x1) W1 + b1) W2 + b2
            // dx currently = dx2
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < d; ++j) G.b2[j] += dx[static_cast<size_t>(i) * d + j];
            transpose(W.w2, wt.data(), ff, d);                      // [d,ff]
            matmul(dx.data(), wt.data(), dg.data(), L, d, ff);      // dg = dx x W2^T
            transpose(ga, mt.data(), L, ff);                        // [ff,L]
            matmul(mt.data(), dx.data(), wt.data(), ff, L, d);      // dW2
            {
                double* p = G.w2;
                for (size_t i = 0; i < static_cast<size_t>(ff) * d; ++i) p[i] += wt[i];
            }
            for (size_t i = 0; i < static_cast<size_t>(L) * ff; ++i) dh1[i] = dg[i] * gelu_grad(h1[i]);
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < ff; ++j) G.b1[j] += dh1[static_cast<size_t>(i) * ff + j];
            // rebuild y2 = ln2 output
            for (int i = 0; i < L; ++i) {
                const double* xh = xh2 + static_cast<size_t>(i) * d;
                double* y = yb.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) y[j] = W.ln2_g[j] * xh[j] + W.ln2_b[j];
            }
            transpose(yb.data(), mt.data(), L, d);                  // [d,L]
            matmul(mt.data(), dh1.data(), wt.data(), d, L, ff);     // dW1
            {
                double* p = G.w1;
                for (size_t i = 0; i < static_cast<size_t>(d) * ff; ++i) p[i] += wt[i];
            }
            transpose(W.w1, wt.data(), d, ff);                      // [ff,d]
            matmul(dh1.data(), wt.data(), dxtmp.data(), L, ff, d);  // dy2
            for (int i = 0; i < L; ++i)
                layer_norm_backward(dxtmp.data() + static_cast<size_t>(i) * d,
                                    xh2 + static_cast<size_t>(i) * d,
                                    rc.rstd2[static_cast<size_t>(l) * L + i], W.ln2_g, d,
                                    yb.data() + static_cast<size_t>(i) * d, G.ln2_g, G.ln2_b);
            for (size_t i = 0; i < ld; ++i) dx[i] += yb[i];  // dx1 = dx2 + LN-path grad

            // ---- attention block: x1 = x0 + attnc x Wo
            transpose(attnc, mt.data(), L, d);
            matmul(mt.data(), dx.data(), wt.data(), d, L, d);  // dWo
            {
                double* p = G.wo;
                for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) p[i] += wt[i];
            }
            transpose(W.wo, wt.data(), d, d);
            matmul(dx.data(), wt.data(), dattnc.data(), L, d, d);

            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (int h = 0; h < H; ++h) {
                const double* pr = rc.probs.data() +
                                   (static_cast<size_t>(l) * H + h) * static_cast<size_t>(L) * L;
                for (int i = 0; i < L; ++i) {
                    std::memcpy(qh.data() + static_cast<size_t>(i) * hd,
                                q + static_cast<size_t>(i) * d + h * hd, sizeof(double) * hd);
                    std::memcpy(kh.data() + static_cast<size_t>(i) * hd,
                                k + static_cast<size_t>(i) * d + h * hd, sizeof(double) * hd);
                    std::memcpy(vh.data() + static_cast<size_t>(i) * hd,
                                v + static_cast<size_t>(i) * d + h * hd, sizeof(double) * hd);
                    std::memcpy(dOh.data() + static_cast<size_t>(i) * hd,
                                dattnc.data() + static_cast<size_t>(i) * d + h * hd,
                                sizeof(double) * hd);
                }
                transpose(vh.data(), mt.data(), L, hd);              // [hd,L]
                matmul(dOh.data(), mt.data(), dP.data(), L, hd, L);  // dP
                transpose(pr, tLL.data(), L, L);
                matmul(tLL.data(), dOh.data(), dVh.data(), L, L, hd);  // dVh = P^T dOh
                // softmax backward within each causal/segment range
                for (int i = 0; i < L; ++i) {
                    const double* prow = pr + static_cast<size_t>(i) * L;
                    const double* dprow = dP.data() + static_cast<size_t>(i) * L;
                    double* dsrow = dS.data() + static_cast<size_t>(i) * L;
                    int s0 = rc.seg_start[i];
                    double dot = 0.0;
                    for (int j = s0; j <= i; ++j) dot += dprow[j] * prow[j];
                    for (int j = 0; j < L; ++j) dsrow[j] = 0.0;
                    for (int j = s0; j <= i; ++j) dsrow[j] = prow[j] * (dprow[j] - dot) * scale;
                }
                matmul(dS.data(), kh.data(), dQh.data(), L, L, hd);
                transpose(dS.data(), tLL.data(), L, L);
                matmul(tLL.data(), qh.data(), dKh.data(), L, L, hd);
                for (int i = 0; i < L; ++i) {
                    for (int j = 0; j < hd; ++j) {
                        dq[static_cast<size_t>(i) * d + h * hd + j] += dQh[static_cast<size_t>(i) * hd + j];
                        dk[static_cast<size_t>(i) * d + h * hd + j] += dKh[static_cast<size_t>(i) * hd + j];
                        dv[static_cast<size_t>(i) * d + h * hd + j] += dVh[static_cast<size_t>(i) * hd + j];
                    }
                }
            }
            // q/k/v projections; rebuild y1
            for (int i = 0; i < L; ++i) {
                const double* xh = xh1 + static_cast<size_t>(i) * d;
                double* y = yb.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) y[j] = W.ln1_g[j] * xh[j] + W.ln1_b[j];
            }
            transpose(yb.data(), mt.data(), L, d);  // [d,L]
            matmul(mt.data(), dq.data(), wt.data(), d, L, d);
            {
                double* p = G.wq;
                for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) p[i] += wt[i];
            }
            matmul(mt.data(), dk.data(), wt.data(), d, L, d);
            {
                double* p = G.wk;
                for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) p[i] += wt[i];
            }
            matmul(mt.data(), dv.data(), wt.data(), d, L, d);
            {
                double* p = G.wv;
                for (size_t i = 0; i < static_cast<size_t>(d) * d; ++i) p[i] += wt[i];
            }
            transpose(W.wq, wt.data(), d, d);
            matmul(dq.data(), wt.data(), dxtmp.data(), L, d, d);
            transpose(W.wk, wt.data(), d, d);
            matmul(dk.data(), wt.data(), dxtmp.data(), L, d, d, /*accumulate=*/true);
            transpose(W.wv, wt.data(), d, d);
            matmul(dv.data(), wt.data(), dxtmp.data(), L, d, d, /*accumulate=*/true);
            for (int i = 0; i < L; ++i)
                layer_norm_backward(dxtmp.data() + static_cast<size_t>(i) * d,
                                    xh1 + static_cast<size_t>(i) * d,
                                    rc.rstd1[static_cast<size_t>(l) * L + i], W.ln1_g, d,
                                    yb.data() + static_cast<size_t>(i) * d, G.ln1_g, G.ln1_b);
            for (size_t i = 0; i < ld; ++i) dx[i] += yb[i];  // dx0
        }

        // embedding scatter
        for (int i = 0; i < L; ++i) {
            double* dE = grads.tok_emb() + static_cast<size_t>(tokens[i]) * d;
            double* dPp = grads.pos_emb() + static_cast<size_t>(pos[i]) * d;
            const double* dxi = dx.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                dE[j] += dxi[j];
                dPp[j] += dxi[j];
            }
        }
    }
}

// Convenience single-row forward returning a copy of the logits.
inline std::vector<double> forward_logits(const Params& P, const std::vector<int32_t>& tokens,
                                          const std::vector<int32_t>& pos,
                                          const std::vector<int32_t>& seg, Workspace& ws) {
    model_detail::RowCache rc;
    model_detail::forward_row(P, tokens.data(), pos.data(), seg.data(),
                              static_cast<int>(tokens.size()), ws, rc);
    return rc.logits;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct OptHyper {
    double lr = 3e-3;
    double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
    double weight_decay = 0.1;  // matrices only (decoupled)
    double clip = 1.0;          // global grad-norm clip
    int warmup = 100;
    int total_steps = 1000;
};

// Linear warmup then cosine decay to zero; t is 1-based.
inline double lr_at(const OptHyper& h, int64_t t) {
    if (h.warmup > 0 && t <= h.warmup) return h.lr * static_cast<double>(t) / h.warmup;
    if (t >= h.total_steps) return 0.0;
    double prog = static_cast<double>(t - h.warmup) / static_cast<double>(h.total_steps - h.warmup);
    return h.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
}

struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;

    explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One AdamW step.  Update rule (exact order of operations, frozen by tests):
//   scale = clip/norm if norm > clip else 1      (norm over the whole arena)
//   g  = grad * scale
//   m  = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
//   mh = m/(1-b1^t)      ; vh = v/(1-b2^t)
//   p -= lr * (mh/(sqrt(vh)+eps) + wd*p)         (wd term on matrices only)
// Returns the pre-clip gradient norm.
inline double opt_step(Params& p, const Params& grads, AdamState& st, const OptHyper& h) {
    if (grads.size() != p.size() || st.m.size() != p.size())
        throw ConfigError("optimizer state shape mismatch");
    const std::vector<double>& g = grads.data();
    double norm2 = 0.0;
    for (double gv : g) norm2 += gv * gv;
    double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    double scale = (h.clip > 0.0 && norm > h.clip) ? h.clip / norm : 1.0;

    st.t += 1;
    const double lr = lr_at(h, st.t);
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));

    std::vector<double>& w = p.data();
    for (const TensorSpec& ts : p.tensors()) {
        const double wd = ts.matrix ? h.weight_decay : 0.0;
        for (size_t i = ts.offset; i < ts.offset + ts.count; ++i) {
            double gv = g[i] * scale;
            st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * gv;
            st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * gv * gv;
            double mh = st.m[i] / bc1;
            double vh = st.v[i] / bc2;
            w[i] -= lr * (mh / (std::sqrt(vh) + h.eps) + wd * w[i]);
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Incremental decoder (KV cache)
// ---------------------------------------------------------------------------

// Single-sequence autoregressive evaluator.  append() feeds one token and
// returns the logits row for the next-token distribution.  Produces bitwise
// the same logits as forward_row over the full prefix (same kernels, same
// per-element reduction order).
class Decoder {
public:
    explicit Decoder(const Params& p) : p_(p), cfg_(p.cfg()) {
        const int d = cfg_.d_model, V = cfg_.vocab;
        et_.resize(static_cast<size_t>(d) * V);
        transpose(p.tok_emb(), et_.data(), V, d);
        kcache_.assign(static_cast<size_t>(cfg_.n_layers) * cfg_.context_len * d, 0.0);
        vcache_.assign(static_cast<size_t>(cfg_.n_layers) * cfg_.context_len * d, 0.0);
        logits_.assign(V, 0.0);
        reset();
    }

    void reset() { len_ = 0; }

    int len() const { return len_; }
    const ModelConfig& cfg() const { return cfg_; }

    // Feeds `token` at the next position; returns logits[V] for what follows.
    const double* append(int32_t token) {
        const int d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim(), ff = cfg_.d_ff,
                  V = cfg_.vocab;
        if (len_ >= cfg_.context_len) throw NumericError("decoder context overflow");
        if (token < 0 || token >= V) throw DataError("token id out of vocab range");

        std::vector<double> x(d), xh(d), y(d), q(d), attnc(d), h1(ff), tmp(std::max(d, ff));
        double rstd;
        const double* te = p_.tok_emb() + static_cast<size_t>(token) * d;
        const double* pe = p_.pos_emb() + static_cast<size_t>(len_) * d;
        for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j];

        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const int t = len_;
        for (int l = 0; l < cfg_.n_layers; ++l) {
            auto W = p_.layer(l);
            model_detail::layer_norm(x.data(), W.ln1_g, W.ln1_b, d, y.data(), xh.data(), &rstd);
            double* krow = kcache_.data() +
                           (static_cast<size_t>(l) * cfg_.context_len + t) * d;
            double* vrow = vcache_.data() +
                           (static_cast<size_t>(l) * cfg_.context_len + t) * d;
            matmul(y.data(), W.wq, q.data(), 1, d, d);
            matmul(y.data(), W.wk, krow, 1, d, d);
            matmul(y.data(), W.wv, vrow, 1, d, d);

            const double* kbase = kcache_.data() + static_cast<size_t>(l) * cfg_.context_len * d;
            const double* vbase = vcache_.data() + static_cast<size_t>(l) * cfg_.context_len * d;
            std::vector<double> s(static_cast<size_t>(t) + 1);
            for (int h = 0; h < H; ++h) {
                const double* qh = q.data() + h * hd;
                for (int j = 0; j <= t; ++j) {
                    const double* kr = kbase + static_cast<size_t>(j) * d + h * hd;
                    double acc = 0.0;
                    for (int dd = 0; dd < hd; ++dd) acc += qh[dd] * kr[dd];
                    s[j] = acc * scale;
                }
                double mx = s[0];
                for (int j = 1; j <= t; ++j)
                    if (s[j] > mx) mx = s[j];
                double z = 0.0;
                for (int j = 0; j <= t; ++j) z += std::exp(s[j] - mx);
                for (int j = 0; j <= t; ++j) s[j] = std::exp(s[j] - mx) / z;
                for (int dd = 0; dd < hd; ++dd) {
                    double acc = 0.0;
                    for (int j = 0; j <= t; ++j) acc += s[j] * vbase[static_cast<size_t>(j) * d + h * hd + dd];
                    attnc[h * hd + dd] = acc;
                }
            }
            matmul(attnc.data(), W.wo, tmp.data(), 1, d, d);
            for (int j = 0; j < d; ++j) x[j] += tmp[j];

            model_detail::layer_norm(x.data(), W.ln2_g, W.ln2_b, d, y.data(), xh.data(), &rstd);
            matmul(y.data(), W.w1, h1.data(), 1, d, ff);
            for (int j = 0; j < ff; ++j) h1[j] = model_detail::gelu(h1[j] + W.b1[j]);
            matmul(h1.data(), W.w2, tmp.data(), 1, ff, d);
            for (int j = 0; j < d; ++j) x[j] += tmp[j] + W.b2[j];
        }
        model_detail::layer_norm(x.data(), p_.lnf_g(), p_.lnf_b(), d, y.data(), xh.data(), &rstd);
        matmul(y.data(), et_.data(), logits_.data(), 1, d, V);
        ++len_;
        return logits_.data();
    }

    const double* logits() const { return logits_.data(); }

private:
    const Params& p_;
    ModelConfig cfg_;
    std::vector<double> et_, kcache_, vcache_, logits_;
    int len_ = 0;
};

// ---------------------------------------------------------------------------
// Sampling primitives
// ---------------------------------------------------------------------------

// Argmax over a legal-id subset; equal logits resolve to the lowest id.
inline int32_t argmax_legal(const double* logits, const std::vector<int32_t>& legal) {
    if (legal.empty()) throw NumericError("empty legal token set");
    int32_t best = legal[0];
    double bv = logits[legal[0]];
    for (size_t i = 1; i < legal.size(); ++i) {
        double v = logits[legal[i]];
        if (v > bv || (v == bv && legal[i] < best)) {
            bv = v;
            best = legal[i];
        }
    }
    return best;
}

// Temperature 0 = argmax; otherwise softmax(logits/temp) over the legal set,
// inverse-CDF sampled with one uniform draw.
inline int32_t sample_legal(const double* logits, const std::vector<int32_t>& legal, double temp,
                            Rng& rng) {
    if (temp <= 0.0) return argmax_legal(logits, legal);
    if (legal.empty()) throw NumericError("empty legal token set");
    double mx = logits[legal[0]];
    for (int32_t id : legal) mx = std::max(mx, logits[id]);
    std::vector<double> w(legal.size());
    double z = 0.0;
    for (size_t i = 0; i < legal.size(); ++i) {
        w[i] = std::exp((logits[legal[i]] - mx) / temp);
        z += w[i];
    }
    double u = rng.next_double() * z;
    double acc = 0.0;
    for (size_t i = 0; i < legal.size(); ++i) {
        acc += w[i];
        if (u < acc) return legal[i];
    }
    return legal.back();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace model_detail {

template <typename T>
inline void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline T get(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

inline void put_str(std::string& buf, const std::string& s) {
    put(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}

inline std::string get_str(const std::string& buf, size_t& off) {
    uint32_t n = get<uint32_t>(buf, off);
    if (off + n > buf.size()) throw DataError("checkpoint truncated");
    std::string s = buf.substr(off, n);
    off += n;
    return s;
}

}  // namespace model_detail

// Binary checkpoint:
//   "RIGF" | u32 version=1 | i32 x6 model dims | f64 init_std | u64 init_seed
//   | str tool_version | str config_hash  (u32 length + bytes each)
//   | u64 n_params | f64[n_params] (little-endian, arena order)
//   | u8 has_opt | [u64 adam_t | f64[n] m | f64[n] v]
//   | u64 fnv1a checksum over everything after the version field
inline void save_checkpoint(const std::filesystem::path& path, const Params& p,
                            const AdamState* opt = nullptr, const std::string& config_hash = "") {
    using model_detail::put;
    using model_detail::put_str;
    const ModelConfig& c = p.cfg();
    std::string payload;
    payload.reserve(p.size() * (opt ? 24 : 8) + 128);
    for (int32_t v : {c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab}) put(payload, v);
    put(payload, c.init_std);
    put(payload, c.init_seed);
    put_str(payload, kToolVersion);
    put_str(payload, config_hash);
    put(payload, static_cast<uint64_t>(p.size()));
    payload.append(reinterpret_cast<const char*>(p.data().data()), p.size() * sizeof(double));
    put(payload, static_cast<uint8_t>(opt ? 1 : 0));
    if (opt) {
        put(payload, static_cast<uint64_t>(opt->t));
        payload.append(reinterpret_cast<const char*>(opt->m.data()), opt->m.size() * sizeof(double));
        payload.append(reinterpret_cast<const char*>(opt->v.data()), opt->v.size() * sizeof(double));
    }
    uint64_t checksum = fnv1a64_bytes(payload.data(), payload.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + path.string());
    f.write("RIGF", 4);
    uint32_t ver = 1;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    f.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!f) throw DataError("checkpoint write failed: " + path.string());
}

struct Checkpoint {
    ModelConfig cfg;
    std::string tool_version;
    std::string config_hash;
    std::vector<double> params;
    bool has_opt = false;
    int64_t opt_t = 0;
    std::vector<double> m, v;
    uint64_t checksum = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    using model_detail::get;
    using model_detail::get_str;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path.string());
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (all.size() < 16 || all.compare(0, 4, "RIGF") != 0)
        throw DataError("bad checkpoint magic: " + path.string());
    size_t off = 4;
    uint32_t ver = get<uint32_t>(all, off);
    if (ver != 1) throw DataError("unsupported checkpoint version");
    std::string payload = all.substr(8, all.size() - 16);
    uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - 8, 8);
    if (fnv1a64_bytes(payload.data(), payload.size()) != stored)
        throw DataError("checkpoint checksum mismatch: " + path.string());

    off = 0;
    Checkpoint ck;
    ck.checksum = stored;
    ck.cfg.n_layers = get<int32_t>(payload, off);
    ck.cfg.n_heads = get<int32_t>(payload, off);
    ck.cfg.d_model = get<int32_t>(payload, off);
    ck.cfg.d_ff = get<int32_t>(payload, off);
    ck.cfg.context_len = get<int32_t>(payload, off);
    ck.cfg.vocab = get<int32_t>(payload, off);
    ck.cfg.init_std = get<double>(payload, off);
    ck.cfg.init_seed = get<uint64_t>(payload, off);
    ck.tool_version = get_str(payload, off);
    ck.config_hash = get_str(payload, off);
    uint64_t n = get<uint64_t>(payload, off);
    Params probe(ck.cfg);
    if (n != probe.size()) throw DataError("checkpoint parameter count mismatch");
    auto read_block = [&](std::vector<double>& dst) {
        if (off + n * 8 > payload.size()) throw DataError("checkpoint truncated");
        dst.resize(n);
        std::memcpy(dst.data(), payload.data() + off, n * 8);
        off += n * 8;
    };
    read_block(ck.params);
    ck.has_opt = get<uint8_t>(payload, off) != 0;
    if (ck.has_opt) {
        ck.opt_t = static_cast<int64_t>(get<uint64_t>(payload, off));
        read_block(ck.m);
        read_block(ck.v);
    }
    if (off != payload.size()) throw DataError("checkpoint has trailing bytes");
    return ck;
}

inline Params params_from_checkpoint(const Checkpoint& ck) {
    Params p(ck.cfg);
    p.data() = ck.params;
    return p;
}

}  // namespace rig
