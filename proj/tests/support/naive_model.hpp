#pragma once

// Independent full-stack reference: embedding, per-layer relative attention
// over [cm; m; window], post-norm skips, GELU MLP, tied logits, and the
// literal in-loop memory update with naive mean-pool compression. Written
// with plain loops against value tensors; shares nothing with the library's
// graph implementation except Tensor storage. With n_cm = 0 this is a
// straight TransformerXL-style reference.

#include <cmath>
#include <vector>

#include "ctrans/model.hpp"
#include "support/list_memory.hpp"
#include "support/naive_attention.hpp"

namespace testsupport {

struct NaiveLayer {
    NaiveAttnWeights attn;
    ctrans::Tensor<double> W1, b1, W2, b2;
    ctrans::Tensor<double> ln1_g, ln1_b, ln2_g, ln2_b;
};

inline ctrans::Tensor<double> naive_layer_norm(const ctrans::Tensor<double>& x, const ctrans::Tensor<double>& gain,
                                               const ctrans::Tensor<double>& bias, double eps = 1e-5) {
    long n = x.dim(0), d = x.dim(1);
    ctrans::Tensor<double> out({n, d});
    for (long r = 0; r < n; ++r) {
        double mu = 0;
        for (long c = 0; c < d; ++c) mu += x.at(r, c);
        mu /= static_cast<double>(d);
        double var = 0;
        for (long c = 0; c < d; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
        var /= static_cast<double>(d);
        double istd = 1.0 / std::sqrt(var + eps);
        for (long c = 0; c < d; ++c) out.at(r, c) = gain[c] * (x.at(r, c) - mu) * istd + bias[c];
    }
    return out;
}

inline double naive_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct NaiveModelRef {
    ctrans::ModelConfig cfg;
    ctrans::Tensor<double> W_emb;
    std::vector<NaiveLayer> layers;
    ctrans::Tensor<double> relpos;
    std::vector<Rows> m, cm;  // per-layer memory rows

    // Copies parameter values out of a live model.
    NaiveModelRef(const ctrans::ModelParams<double>& p, const ctrans::ModelConfig& config,
                  const ctrans::RelPosEncoding<double>& enc)
        : cfg(config), W_emb(p.W_emb->value), relpos(enc.table) {
        for (const auto& lp : p.layers) {
            NaiveLayer nl;
            nl.attn.Wq = lp.attn.Wq->value;
            nl.attn.Wk = lp.attn.Wk->value;
            nl.attn.Wv = lp.attn.Wv->value;
            nl.attn.Wo = lp.attn.Wo->value;
            nl.attn.Wr = lp.attn.Wr->value;
            nl.attn.u = lp.attn.u->value;
            nl.attn.v = lp.attn.v->value;
            nl.W1 = lp.W1->value;
            nl.b1 = lp.b1->value;
            nl.W2 = lp.W2->value;
            nl.b2 = lp.b2->value;
            nl.ln1_g = lp.ln1_g->value;
            nl.ln1_b = lp.ln1_b->value;
            nl.ln2_g = lp.ln2_g->value;
            nl.ln2_b = lp.ln2_b->value;
            layers.push_back(std::move(nl));
        }
        m.assign(static_cast<size_t>(cfg.l), Rows(static_cast<size_t>(cfg.n_m), Row(static_cast<size_t>(cfg.d), 0.0)));
        cm.assign(static_cast<size_t>(cfg.l), Rows(static_cast<size_t>(cfg.n_cm), Row(static_cast<size_t>(cfg.d), 0.0)));
    }

    static Rows mean_pool_rows(const Rows& rows, long c) {
        long n = static_cast<long>(rows.size());
        long q = n / c;
        Rows out;
        for (long t = 0; t < q; ++t) {
            long lo = t * c;
            long hi = (t == q - 1) ? n : lo + c;  // final window absorbs the remainder
            Row acc(rows[0].size(), 0.0);
            for (long r = lo; r < hi; ++r)
                for (size_t k = 0; k < acc.size(); ++k) acc[k] += rows[static_cast<size_t>(r)][k];
            for (double& v : acc) v /= static_cast<double>(hi - lo);
            out.push_back(std::move(acc));
        }
        return out;
    }

    // One window; mutates memory in the literal per-layer order.
    ctrans::Tensor<double> forward(const std::vector<int>& tokens) {
        long n_s = static_cast<long>(tokens.size());
        long d = cfg.d;
        ctrans::Tensor<double> h({n_s, d});
        for (long i = 0; i < n_s; ++i)
            for (long cidx = 0; cidx < d; ++cidx) h.at(i, cidx) = W_emb.at(tokens[static_cast<size_t>(i)], cidx);
        for (long li = 0; li < cfg.l; ++li) {
            NaiveLayer& lp = layers[static_cast<size_t>(li)];
            long mem_len = cfg.n_cm + cfg.n_m;
            ctrans::Tensor<double> mem({mem_len, d});
            for (long r = 0; r < cfg.n_cm; ++r)
                for (long cidx = 0; cidx < d; ++cidx) mem.at(r, cidx) = cm[static_cast<size_t>(li)][static_cast<size_t>(r)][static_cast<size_t>(cidx)];
            for (long r = 0; r < cfg.n_m; ++r)
                for (long cidx = 0; cidx < d; ++cidx) mem.at(cfg.n_cm + r, cidx) = m[static_cast<size_t>(li)][static_cast<size_t>(r)][static_cast<size_t>(cidx)];
            ctrans::Tensor<double> attended = naive_multihead_attention(h, mem, lp.attn, relpos, cfg.heads);
            ctrans::Tensor<double> summed({n_s, d});
            for (long i = 0; i < n_s * d; ++i) summed[i] = attended[i] + h[i];
            ctrans::Tensor<double> a = naive_layer_norm(summed, lp.ln1_g, lp.ln1_b);

            // memory update for this layer, Algorithm-1 order
            Rows h_rows(static_cast<size_t>(n_s), Row(static_cast<size_t>(d)));
            for (long i = 0; i < n_s; ++i)
                for (long cidx = 0; cidx < d; ++cidx) h_rows[static_cast<size_t>(i)][static_cast<size_t>(cidx)] = h.at(i, cidx);
            Rows old_rows(m[static_cast<size_t>(li)].begin(), m[static_cast<size_t>(li)].begin() + n_s);
            Rows& mem_rows = m[static_cast<size_t>(li)];
            mem_rows.insert(mem_rows.end(), h_rows.begin(), h_rows.end());
            mem_rows.erase(mem_rows.begin(), mem_rows.end() - cfg.n_m);
            if (cfg.n_cm > 0) {
                Rows compressed = mean_pool_rows(old_rows, cfg.c);
                Rows& cm_rows = cm[static_cast<size_t>(li)];
                cm_rows.insert(cm_rows.end(), compressed.begin(), compressed.end());
                cm_rows.erase(cm_rows.begin(), cm_rows.end() - cfg.n_cm);
            }

            // mixing MLP
            ctrans::Tensor<double> mid({n_s, cfg.mlp_hidden});
            for (long i = 0; i < n_s; ++i)
                for (long j = 0; j < cfg.mlp_hidden; ++j) {
                    double acc = lp.b1[j];
                    for (long k = 0; k < d; ++k) acc += a.at(i, k) * lp.W1.at(k, j);
                    mid.at(i, j) = naive_gelu(acc);
                }
            ctrans::Tensor<double> mlp_out({n_s, d});
            for (long i = 0; i < n_s; ++i)
                for (long j = 0; j < d; ++j) {
                    double acc = lp.b2[j];
                    for (long k = 0; k < cfg.mlp_hidden; ++k) acc += mid.at(i, k) * lp.W2.at(k, j);
                    mlp_out.at(i, j) = acc + a.at(i, j);
                }
            h = naive_layer_norm(mlp_out, lp.ln2_g, lp.ln2_b);
        }
        ctrans::Tensor<double> logits({n_s, cfg.vocab_size});
        for (long i = 0; i < n_s; ++i)
            for (long vtok = 0; vtok < cfg.vocab_size; ++vtok) {
                double acc = 0;
                for (long k = 0; k < d; ++k) acc += h.at(i, k) * W_emb.at(vtok, k);
                logits.at(i, vtok) = acc;
            }
        return logits;
    }
};

}  // namespace testsupport
