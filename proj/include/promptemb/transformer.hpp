#pragma once

// Desk-scale decoder-only transformer: pre-LN blocks, causal attention,
// learned positions derived from the attention mask so left padding never
// changes what a real token sees. Templated on the scalar type; float is the
// production path, double exists so gradient tests can run at full precision.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "promptemb/backend.hpp"
#include "promptemb/errors.hpp"

namespace promptemb::tfm {

struct Shape {
    int vocab = 0;
    int max_len = 0;
    int dim = 0;
    int heads = 0;
    int ffn = 0;
    int layers = 0;

    int head_dim() const { return dim / heads; }
};

inline constexpr double kLnEps = 1e-5;

template <typename S>
struct LayerWeights {
    std::vector<S> ln1_g, ln1_b;
    std::vector<S> wq, wk, wv, wo;  // dim x dim, row-major
    std::vector<S> ln2_g, ln2_b;
    std::vector<S> fc1;  // ffn x dim
    std::vector<S> fc2;  // dim x ffn
};

template <typename S>
struct Weights {
    Shape shape;
    std::vector<S> wte;  // vocab x dim
    std::vector<S> wpe;  // max_len x dim
    std::vector<LayerWeights<S>> layers;
    std::vector<S> lnf_g, lnf_b;
    std::vector<S> lm_head;  // vocab x dim
};

// Adapted linears per layer, in this fixed order.
inline constexpr int kLinPerLayer = 6;
enum : int { kWq = 0, kWk = 1, kWv = 2, kWo = 3, kFc1 = 4, kFc2 = 5 };

template <typename S>
struct AdapterMat {
    int m = 0, n = 0, rank = 0;
    std::vector<S> a;  // rank x n
    std::vector<S> b;  // m x rank, zero-initialized
};

template <typename S>
struct Adapters {
    S scale = S(0);    // alpha / rank
    S dropout = S(0);  // adapter-path dropout, training only
    std::vector<AdapterMat<S>> mats;  // layers * kLinPerLayer

    AdapterMat<S>& at(int layer, int which) {
        return mats[static_cast<std::size_t>(layer * kLinPerLayer + which)];
    }
    const AdapterMat<S>& at(int layer, int which) const {
        return mats[static_cast<std::size_t>(layer * kLinPerLayer + which)];
    }
};

template <typename S>
struct AdapterGrads {
    std::vector<std::vector<S>> da, db;  // parallel to Adapters::mats

    void init_like(const Adapters<S>& ad) {
        da.clear();
        db.clear();
        for (const auto& m : ad.mats) {
            da.emplace_back(m.a.size(), S(0));
            db.emplace_back(m.b.size(), S(0));
        }
    }
    void zero() {
        for (auto& g : da) std::fill(g.begin(), g.end(), S(0));
        for (auto& g : db) std::fill(g.begin(), g.end(), S(0));
    }
};

struct PaddedBatch {
    int rows = 0;
    int len = 0;
    std::vector<int> ids;            // rows * len
    std::vector<std::uint8_t> mask;  // rows * len
    std::vector<int> first_real;     // per row

    int id(int r, int t) const { return ids[static_cast<std::size_t>(r) * len + t]; }
    bool real(int r, int t) const { return mask[static_cast<std::size_t>(r) * len + t] != 0; }
};

inline PaddedBatch make_padded_batch(const std::vector<TokenSequence>& seqs) {
    if (seqs.empty()) throw Error(ErrorKind::data, "empty batch");
    PaddedBatch b;
    b.rows = static_cast<int>(seqs.size());
    b.len = static_cast<int>(seqs[0].token_ids.size());
    for (const auto& s : seqs) {
        check_token_sequence(s);
        if (static_cast<int>(s.token_ids.size()) != b.len)
            throw Error(ErrorKind::data, "batch sequences not padded to equal length");
    }
    b.ids.reserve(static_cast<std::size_t>(b.rows) * b.len);
    b.mask.reserve(static_cast<std::size_t>(b.rows) * b.len);
    for (const auto& s : seqs) {
        b.ids.insert(b.ids.end(), s.token_ids.begin(), s.token_ids.end());
        b.mask.insert(b.mask.end(), s.attention_mask.begin(), s.attention_mask.end());
        b.first_real.push_back(first_real_index(s));
    }
    return b;
}

template <typename S>
struct Tape {
    struct LayerTape {
        std::vector<S> ln1_mean, ln1_rstd;
        std::vector<S> ln1_out, q, k, v;
        std::vector<S> attn_w;  // rows * heads * len * len, softmax probabilities
        std::vector<S> ctx;
        std::vector<S> resid_mid;  // after attention residual
        std::vector<S> ln2_mean, ln2_rstd;
        std::vector<S> ln2_out;
        std::vector<S> fc1_pre, fc1_act;
        std::vector<S> resid_out;  // after ffn residual; next layer's input
        std::array<std::vector<std::uint8_t>, kLinPerLayer> drop_mask;
        std::array<std::vector<S>, kLinPerLayer> lora_u;  // rows * len * rank
    };
    std::vector<S> emb;  // layer-0 input
    std::vector<LayerTape> layers;
    std::vector<S> lnf_mean, lnf_rstd;
    bool dropout_active = false;
};

// ---- kernels; reductions accumulate in double ----

template <typename S>
inline void matvec(const S* w, const S* x, S* y, int m, int n) {
    for (int o = 0; o < m; ++o) {
        double acc = 0.0;
        const S* row = w + static_cast<std::size_t>(o) * n;
        for (int i = 0; i < n; ++i) acc += static_cast<double>(row[i]) * static_cast<double>(x[i]);
        y[o] = static_cast<S>(acc);
    }
}

// dx += W^T dy
template <typename S>
inline void matvec_t_acc(const S* w, const S* dy, S* dx, int m, int n) {
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int o = 0; o < m; ++o)
            acc += static_cast<double>(w[static_cast<std::size_t>(o) * n + i]) *
                   static_cast<double>(dy[o]);
        dx[i] += static_cast<S>(acc);
    }
}

template <typename S>
inline void layernorm(const S* x, const S* g, const S* b, S* y, S* mean_out, S* rstd_out,
                      int dim) {
    double sum = 0.0;
    for (int i = 0; i < dim; ++i) sum += static_cast<double>(x[i]);
    const double mean = sum / dim;
    double var = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(x[i]) - mean;
        var += d * d;
    }
    var /= dim;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < dim; ++i)
        y[i] = static_cast<S>((static_cast<double>(x[i]) - mean) * rstd *
                                  static_cast<double>(g[i]) +
                              static_cast<double>(b[i]));
    *mean_out = static_cast<S>(mean);
    *rstd_out = static_cast<S>(rstd);
}

// dx += dL/dx given dy; gamma/beta are frozen so no parameter grads.
template <typename S>
inline void layernorm_backward(const S* dy, const S* x, const S* g, S mean, S rstd, S* dx,
                               int dim) {
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double xhat = (static_cast<double>(x[i]) - static_cast<double>(mean)) *
                            static_cast<double>(rstd);
        const double dxhat = static_cast<double>(dy[i]) * static_cast<double>(g[i]);
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= dim;
    m2 /= dim;
    for (int i = 0; i < dim; ++i) {
        const double xhat = (static_cast<double>(x[i]) - static_cast<double>(mean)) *
                            static_cast<double>(rstd);
        const double dxhat = static_cast<double>(dy[i]) * static_cast<double>(g[i]);
        dx[i] += static_cast<S>((dxhat - m1 - xhat * m2) * static_cast<double>(rstd));
    }
}

template <typename S>
inline S gelu(S x) {
    const double xd = static_cast<double>(x);
    return static_cast<S>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

template <typename S>
inline S gelu_grad(S x) {
    const double xd = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
    return static_cast<S>(cdf + xd * pdf);
}

namespace detail {

// One linear stage over every real position: y = W x plus the adapter path
// scale * B (A dropout(x)). Records the dropout mask and u = A xd when taping.
template <typename S>
void linear_stage(const S* w, int m, int n, const AdapterMat<S>* ad, S scale, S dropout,
                  bool training, std::mt19937* rng, const PaddedBatch& batch,
                  const std::vector<S>& x, std::vector<S>& y,
                  std::vector<std::uint8_t>* mask_out, std::vector<S>* u_out) {
    const bool use_dropout = training && ad != nullptr && dropout > S(0) && rng != nullptr;
    const int rank = ad ? ad->rank : 0;
    if (mask_out && use_dropout)
        mask_out->assign(static_cast<std::size_t>(batch.rows) * batch.len * n, 1);
    if (u_out && ad) u_out->assign(static_cast<std::size_t>(batch.rows) * batch.len * rank, S(0));
    std::bernoulli_distribution keep(1.0 - static_cast<double>(dropout));
    std::vector<S> xd(ad ? static_cast<std::size_t>(n) : 0);
    std::vector<S> u_local(ad && !u_out ? static_cast<std::size_t>(rank) : 0);
    const S keep_scale = use_dropout ? S(1) / (S(1) - dropout) : S(1);

    for (int r = 0; r < batch.rows; ++r) {
        for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < batch.len; ++t) {
            const std::size_t pos = static_cast<std::size_t>(r) * batch.len + t;
            const S* xin = x.data() + pos * n;
            S* yout = y.data() + pos * m;
            matvec(w, xin, yout, m, n);
            if (!ad) continue;
            if (use_dropout) {
                for (int i = 0; i < n; ++i) {
                    const bool k = keep(*rng);
                    if (mask_out) (*mask_out)[pos * n + i] = k ? 1 : 0;
                    xd[static_cast<std::size_t>(i)] = k ? xin[i] * keep_scale : S(0);
                }
            } else {
                for (int i = 0; i < n; ++i) xd[static_cast<std::size_t>(i)] = xin[i];
            }
            S* u = u_out ? u_out->data() + pos * rank : u_local.data();
            matvec(ad->a.data(), xd.data(), u, rank, n);
            for (int o = 0; o < m; ++o) {
                double acc = 0.0;
                const S* brow = ad->b.data() + static_cast<std::size_t>(o) * rank;
                for (int j = 0; j < rank; ++j)
                    acc += static_cast<double>(brow[j]) * static_cast<double>(u[j]);
                yout[o] += static_cast<S>(static_cast<double>(scale) * acc);
            }
        }
    }
}

// Reverse of linear_stage. dx accumulates W^T dy plus the adapter path;
// dA and dB accumulate the adapter gradients.
template <typename S>
void linear_stage_backward(const S* w, int m, int n, const AdapterMat<S>& ad, S scale, S dropout,
                           bool had_dropout, const PaddedBatch& batch, const std::vector<S>& x,
                           const std::vector<S>& dy, const std::vector<std::uint8_t>& mask,
                           const std::vector<S>& u, std::vector<S>& dx_acc, std::vector<S>& da,
                           std::vector<S>& db) {
    const int rank = ad.rank;
    const S keep_scale = had_dropout ? S(1) / (S(1) - dropout) : S(1);
    std::vector<S> tmp(static_cast<std::size_t>(rank));
    std::vector<S> xd(static_cast<std::size_t>(n));
    for (int r = 0; r < batch.rows; ++r) {
        for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < batch.len; ++t) {
            const std::size_t pos = static_cast<std::size_t>(r) * batch.len + t;
            const S* dyp = dy.data() + pos * m;
            const S* xin = x.data() + pos * n;
            S* dxp = dx_acc.data() + pos * n;

            matvec_t_acc(w, dyp, dxp, m, n);

            // tmp = B^T dy
            for (int j = 0; j < rank; ++j) {
                double acc = 0.0;
                for (int o = 0; o < m; ++o)
                    acc += static_cast<double>(ad.b[static_cast<std::size_t>(o) * rank + j]) *
                           static_cast<double>(dyp[o]);
                tmp[static_cast<std::size_t>(j)] = static_cast<S>(acc);
            }
            if (had_dropout) {
                const std::uint8_t* mp = mask.data() + pos * n;
                for (int i = 0; i < n; ++i)
                    xd[static_cast<std::size_t>(i)] = mp[i] ? xin[i] * keep_scale : S(0);
            } else {
                for (int i = 0; i < n; ++i) xd[static_cast<std::size_t>(i)] = xin[i];
            }
            const S* up = u.data() + pos * rank;
            // dB += scale * dy u^T ; dA += scale * tmp xd^T
            for (int o = 0; o < m; ++o) {
                S* dbrow = db.data() + static_cast<std::size_t>(o) * rank;
                const S dyo = dyp[o];
                for (int j = 0; j < rank; ++j) dbrow[j] += scale * dyo * up[j];
            }
            for (int j = 0; j < rank; ++j) {
                S* darow = da.data() + static_cast<std::size_t>(j) * n;
                const S tj = scale * tmp[static_cast<std::size_t>(j)];
                for (int i = 0; i < n; ++i) darow[i] += tj * xd[static_cast<std::size_t>(i)];
            }
            // dx += scale * (A^T tmp) through the dropout mask
            for (int i = 0; i < n; ++i) {
                if (had_dropout && !mask[pos * n + i]) continue;
                double acc = 0.0;
                for (int j = 0; j < rank; ++j)
                    acc += static_cast<double>(ad.a[static_cast<std::size_t>(j) * n + i]) *
                           static_cast<double>(tmp[static_cast<std::size_t>(j)]);
                dxp[i] += static_cast<S>(static_cast<double>(scale) * acc *
                                         static_cast<double>(keep_scale));
            }
        }
    }
}

}  // namespace detail

/// Full forward pass. `hidden_out` gets the post-final-layernorm states for
/// every real position (pads stay zero). Pass a tape to record activations
/// for backward; adapter dropout is active only when taping.
template <typename S>
void forward(const Weights<S>& w, const Adapters<S>* ad, const PaddedBatch& batch,
             std::mt19937* dropout_rng, Tape<S>* tape, std::vector<S>& hidden_out) {
    const Shape& sh = w.shape;
    const int R = batch.rows, T = batch.len, D = sh.dim, H = sh.heads, F = sh.ffn;
    const int hd = sh.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t npos = static_cast<std::size_t>(R) * T;
    const bool training = tape != nullptr;

    if (T > sh.max_len)
        throw SequenceTooLongError(sh.max_len, T);
    for (int r = 0; r < R; ++r)
        for (int t = 0; t < T; ++t)
            if (batch.real(r, t) && (batch.id(r, t) < 0 || batch.id(r, t) >= sh.vocab))
                throw Error(ErrorKind::data, "token id out of vocabulary range");

    std::vector<S> x(npos * D, S(0));
    for (int r = 0; r < R; ++r) {
        const int fr = batch.first_real[static_cast<std::size_t>(r)];
        for (int t = fr; t < T; ++t) {
            const std::size_t pos = static_cast<std::size_t>(r) * T + t;
            const S* tok = w.wte.data() + static_cast<std::size_t>(batch.id(r, t)) * D;
            const S* posv = w.wpe.data() + static_cast<std::size_t>(t - fr) * D;
            S* out = x.data() + pos * D;
            for (int i = 0; i < D; ++i) out[i] = tok[i] + posv[i];
        }
    }
    if (tape) {
        tape->emb = x;
        tape->layers.assign(static_cast<std::size_t>(sh.layers), {});
        tape->dropout_active = ad && ad->dropout > S(0) && dropout_rng;
    }

    std::vector<S> ln_out(npos * D, S(0)), q(npos * D, S(0)), k(npos * D, S(0)),
        v(npos * D, S(0)), ctx(npos * D, S(0)), proj(npos * D, S(0));
    std::vector<S> f_pre(npos * F, S(0)), f_act(npos * F, S(0));
    std::vector<S> means(npos, S(0)), rstds(npos, S(0));

    for (int l = 0; l < sh.layers; ++l) {
        const LayerWeights<S>& lw = w.layers[static_cast<std::size_t>(l)];
        auto* lt = tape ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;

        for (int r = 0; r < R; ++r)
            for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
                const std::size_t pos = static_cast<std::size_t>(r) * T + t;
                layernorm(x.data() + pos * D, lw.ln1_g.data(), lw.ln1_b.data(),
                          ln_out.data() + pos * D, &means[pos], &rstds[pos], D);
            }
        if (lt) {
            lt->ln1_mean = means;
            lt->ln1_rstd = rstds;
            lt->ln1_out = ln_out;
        }

        auto run_lin = [&](int which, const std::vector<S>& src, std::vector<S>& dst,
                           const S* mat, int m, int n) {
            detail::linear_stage(mat, m, n, ad ? &ad->at(l, which) : nullptr,
                                 ad ? ad->scale : S(0), ad ? ad->dropout : S(0), training,
                                 dropout_rng, batch, src, dst,
                                 lt ? &lt->drop_mask[static_cast<std::size_t>(which)] : nullptr,
                                 lt ? &lt->lora_u[static_cast<std::size_t>(which)] : nullptr);
        };
        run_lin(kWq, ln_out, q, lw.wq.data(), D, D);
        run_lin(kWk, ln_out, k, lw.wk.data(), D, D);
        run_lin(kWv, ln_out, v, lw.wv.data(), D, D);
        if (lt) {
            lt->q = q;
            lt->k = k;
            lt->v = v;
        }

        if (lt) lt->attn_w.assign(static_cast<std::size_t>(R) * H * T * T, S(0));
        std::vector<S> weights_row(static_cast<std::size_t>(T));
        for (int r = 0; r < R; ++r) {
            const int fr = batch.first_real[static_cast<std::size_t>(r)];
            for (int h = 0; h < H; ++h) {
                const int off = h * hd;
                for (int t = fr; t < T; ++t) {
                    const std::size_t qpos = (static_cast<std::size_t>(r) * T + t) * D + off;
                    double maxs = -1e30;
                    for (int s = fr; s <= t; ++s) {
                        const std::size_t kpos = (static_cast<std::size_t>(r) * T + s) * D + off;
                        double dot = 0.0;
                        for (int j = 0; j < hd; ++j)
                            dot += static_cast<double>(q[qpos + j]) *
                                   static_cast<double>(k[kpos + j]);
                        dot *= inv_sqrt_hd;
                        weights_row[static_cast<std::size_t>(s)] = static_cast<S>(dot);
                        if (dot > maxs) maxs = dot;
                    }
                    double denom = 0.0;
                    for (int s = fr; s <= t; ++s) {
                        const double e =
                            std::exp(static_cast<double>(weights_row[static_cast<std::size_t>(s)]) -
                                     maxs);
                        weights_row[static_cast<std::size_t>(s)] = static_cast<S>(e);
                        denom += e;
                    }
                    for (int s = fr; s <= t; ++s)
                        weights_row[static_cast<std::size_t>(s)] =
                            static_cast<S>(static_cast<double>(weights_row[static_cast<std::size_t>(s)]) / denom);
                    S* out = ctx.data() + (static_cast<std::size_t>(r) * T + t) * D + off;
                    for (int j = 0; j < hd; ++j) {
                        double acc = 0.0;
                        for (int s = fr; s <= t; ++s)
                            acc += static_cast<double>(weights_row[static_cast<std::size_t>(s)]) *
                                   static_cast<double>(
                                       v[(static_cast<std::size_t>(r) * T + s) * D + off + j]);
                        out[j] = static_cast<S>(acc);
                    }
                    if (lt) {
                        S* wrow = lt->attn_w.data() +
                                  ((static_cast<std::size_t>(r) * H + h) * T + t) * T;
                        for (int s = fr; s <= t; ++s)
                            wrow[s] = weights_row[static_cast<std::size_t>(s)];
                    }
                }
            }
        }
        if (lt) lt->ctx = ctx;

        run_lin(kWo, ctx, proj, lw.wo.data(), D, D);
        for (std::size_t i = 0; i < npos * static_cast<std::size_t>(D); ++i) x[i] += proj[i];
        if (lt) lt->resid_mid = x;

        for (int r = 0; r < R; ++r)
            for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
                const std::size_t pos = static_cast<std::size_t>(r) * T + t;
                layernorm(x.data() + pos * D, lw.ln2_g.data(), lw.ln2_b.data(),
                          ln_out.data() + pos * D, &means[pos], &rstds[pos], D);
            }
        if (lt) {
            lt->ln2_mean = means;
            lt->ln2_rstd = rstds;
            lt->ln2_out = ln_out;
        }

        run_lin(kFc1, ln_out, f_pre, lw.fc1.data(), F, D);
        for (std::size_t i = 0; i < npos * static_cast<std::size_t>(F); ++i)
            f_act[i] = gelu(f_pre[i]);
        if (lt) {
            lt->fc1_pre = f_pre;
            lt->fc1_act = f_act;
        }

        run_lin(kFc2, f_act, proj, lw.fc2.data(), D, F);
        for (std::size_t i = 0; i < npos * static_cast<std::size_t>(D); ++i) x[i] += proj[i];
        if (lt) lt->resid_out = x;
    }

    hidden_out.assign(npos * static_cast<std::size_t>(D), S(0));
    for (int r = 0; r < R; ++r)
        for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
            const std::size_t pos = static_cast<std::size_t>(r) * T + t;
            layernorm(x.data() + pos * D, w.lnf_g.data(), w.lnf_b.data(),
                      hidden_out.data() + pos * D, &means[pos], &rstds[pos], D);
        }
    if (tape) {
        tape->lnf_mean = means;
        tape->lnf_rstd = rstds;
    }
}

/// Backprop of d_hidden (same layout as hidden_out) into adapter gradients.
/// Base weights, embeddings, and norms are frozen by design.
template <typename S>
void backward(const Weights<S>& w, const Adapters<S>& ad, const PaddedBatch& batch,
              const Tape<S>& tape, const std::vector<S>& d_hidden, AdapterGrads<S>& grads) {
    const Shape& sh = w.shape;
    const int R = batch.rows, T = batch.len, D = sh.dim, H = sh.heads, F = sh.ffn;
    const int hd = sh.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t npos = static_cast<std::size_t>(R) * T;
    const bool had_dropout = tape.dropout_active;

    // dL/d(final residual stream), from the final layernorm
    std::vector<S> dx(npos * static_cast<std::size_t>(D), S(0));
    {
        const std::vector<S>& x_final =
            sh.layers > 0 ? tape.layers[static_cast<std::size_t>(sh.layers - 1)].resid_out
                          : tape.emb;
        for (int r = 0; r < R; ++r)
            for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
                const std::size_t pos = static_cast<std::size_t>(r) * T + t;
                layernorm_backward(d_hidden.data() + pos * D, x_final.data() + pos * D,
                                   w.lnf_g.data(), tape.lnf_mean[pos], tape.lnf_rstd[pos],
                                   dx.data() + pos * D, D);
            }
    }

    std::vector<S> d_ln(npos * static_cast<std::size_t>(D), S(0));
    std::vector<S> d_fpre(npos * static_cast<std::size_t>(F), S(0));
    std::vector<S> d_fact(npos * static_cast<std::size_t>(F), S(0));
    std::vector<S> dq(npos * static_cast<std::size_t>(D), S(0)),
        dk(npos * static_cast<std::size_t>(D), S(0)), dv(npos * static_cast<std::size_t>(D), S(0)),
        dctx(npos * static_cast<std::size_t>(D), S(0));

    for (int l = sh.layers - 1; l >= 0; --l) {
        const LayerWeights<S>& lw = w.layers[static_cast<std::size_t>(l)];
        const auto& lt = tape.layers[static_cast<std::size_t>(l)];
        const std::vector<S>& layer_in =
            l > 0 ? tape.layers[static_cast<std::size_t>(l - 1)].resid_out : tape.emb;

        // ffn: dx flows both into the residual skip and through fc2/gelu/fc1/ln2
        std::fill(d_fact.begin(), d_fact.end(), S(0));
        detail::linear_stage_backward(lw.fc2.data(), D, F, ad.at(l, kFc2), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.fc1_act, dx,
                                      lt.drop_mask[kFc2], lt.lora_u[kFc2], d_fact,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kFc2)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kFc2)]);
        for (std::size_t i = 0; i < npos * static_cast<std::size_t>(F); ++i)
            d_fpre[i] = d_fact[i] * gelu_grad(lt.fc1_pre[i]);
        std::fill(d_ln.begin(), d_ln.end(), S(0));
        detail::linear_stage_backward(lw.fc1.data(), F, D, ad.at(l, kFc1), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.ln2_out, d_fpre,
                                      lt.drop_mask[kFc1], lt.lora_u[kFc1], d_ln,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kFc1)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kFc1)]);
        for (int r = 0; r < R; ++r)
            for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
                const std::size_t pos = static_cast<std::size_t>(r) * T + t;
                layernorm_backward(d_ln.data() + pos * D, lt.resid_mid.data() + pos * D,
                                   lw.ln2_g.data(), lt.ln2_mean[pos], lt.ln2_rstd[pos],
                                   dx.data() + pos * D, D);
            }

        // attention: dx -> wo -> attention weights -> q,k,v -> ln1 -> layer input
        std::fill(dctx.begin(), dctx.end(), S(0));
        detail::linear_stage_backward(lw.wo.data(), D, D, ad.at(l, kWo), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.ctx, dx, lt.drop_mask[kWo],
                                      lt.lora_u[kWo], dctx,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kWo)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kWo)]);

        std::fill(dq.begin(), dq.end(), S(0));
        std::fill(dk.begin(), dk.end(), S(0));
        std::fill(dv.begin(), dv.end(), S(0));
        std::vector<double> dscore(static_cast<std::size_t>(T));
        for (int r = 0; r < R; ++r) {
            const int fr = batch.first_real[static_cast<std::size_t>(r)];
            for (int h = 0; h < H; ++h) {
                const int off = h * hd;
                for (int t = fr; t < T; ++t) {
                    const S* wrow =
                        lt.attn_w.data() + ((static_cast<std::size_t>(r) * H + h) * T + t) * T;
                    const S* dctx_p =
                        dctx.data() + (static_cast<std::size_t>(r) * T + t) * D + off;
                    double sum_dw_w = 0.0;
                    for (int s = fr; s <= t; ++s) {
                        const S* vp = lt.v.data() + (static_cast<std::size_t>(r) * T + s) * D + off;
                        S* dvp = dv.data() + (static_cast<std::size_t>(r) * T + s) * D + off;
                        double dw = 0.0;
                        for (int j = 0; j < hd; ++j) {
                            dw += static_cast<double>(dctx_p[j]) * static_cast<double>(vp[j]);
                            dvp[j] += static_cast<S>(static_cast<double>(wrow[s]) *
                                                     static_cast<double>(dctx_p[j]));
                        }
                        dscore[static_cast<std::size_t>(s)] = dw;
                        sum_dw_w += dw * static_cast<double>(wrow[s]);
                    }
                    S* dqp = dq.data() + (static_cast<std::size_t>(r) * T + t) * D + off;
                    const S* qp = lt.q.data() + (static_cast<std::size_t>(r) * T + t) * D + off;
                    for (int s = fr; s <= t; ++s) {
                        const double ds = static_cast<double>(wrow[s]) *
                                          (dscore[static_cast<std::size_t>(s)] - sum_dw_w) *
                                          inv_sqrt_hd;
                        const S* kp = lt.k.data() + (static_cast<std::size_t>(r) * T + s) * D + off;
                        S* dkp = dk.data() + (static_cast<std::size_t>(r) * T + s) * D + off;
                        for (int j = 0; j < hd; ++j) {
                            dqp[j] += static_cast<S>(ds * static_cast<double>(kp[j]));
                            dkp[j] += static_cast<S>(ds * static_cast<double>(qp[j]));
                        }
                    }
                }
            }
        }

        std::fill(d_ln.begin(), d_ln.end(), S(0));
        detail::linear_stage_backward(lw.wq.data(), D, D, ad.at(l, kWq), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.ln1_out, dq, lt.drop_mask[kWq],
                                      lt.lora_u[kWq], d_ln,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kWq)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kWq)]);
        detail::linear_stage_backward(lw.wk.data(), D, D, ad.at(l, kWk), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.ln1_out, dk, lt.drop_mask[kWk],
                                      lt.lora_u[kWk], d_ln,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kWk)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kWk)]);
        detail::linear_stage_backward(lw.wv.data(), D, D, ad.at(l, kWv), ad.scale, ad.dropout,
                                      had_dropout, batch, lt.ln1_out, dv, lt.drop_mask[kWv],
                                      lt.lora_u[kWv], d_ln,
                                      grads.da[static_cast<std::size_t>(l * kLinPerLayer + kWv)],
                                      grads.db[static_cast<std::size_t>(l * kLinPerLayer + kWv)]);
        for (int r = 0; r < R; ++r)
            for (int t = batch.first_real[static_cast<std::size_t>(r)]; t < T; ++t) {
                const std::size_t pos = static_cast<std::size_t>(r) * T + t;
                layernorm_backward(d_ln.data() + pos * D, layer_in.data() + pos * D,
                                   lw.ln1_g.data(), lt.ln1_mean[pos], lt.ln1_rstd[pos],
                                   dx.data() + pos * D, D);
            }
        // dx already carries the two residual skips (it was never overwritten).
    }
}

}  // namespace promptemb::tfm
