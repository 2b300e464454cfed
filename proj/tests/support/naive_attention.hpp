#pragma once

// Brute-force attention oracle: triple-loop evaluation of the relative
// four-term attention, written against plain value tensors with no shared
// code beyond Tensor storage. Used to validate the library's graph-based
// implementation on small instances.

#include <cmath>
#include <vector>

#include "ctrans/tensor.hpp"

namespace testsupport {

struct NaiveAttnWeights {
    ctrans::Tensor<double> Wq, Wk, Wv, Wo, Wr;  // d x d
    ctrans::Tensor<double> u, v;                // 1 x d
};

inline ctrans::Tensor<double> naive_matmul(const ctrans::Tensor<double>& a, const ctrans::Tensor<double>& b) {
    ctrans::Tensor<double> out({a.dim(0), b.dim(1)});
    for (long i = 0; i < a.dim(0); ++i)
        for (long j = 0; j < b.dim(1); ++j) {
            double acc = 0;
            for (long k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

// h: n_s x d, mem: mem_len x d, relpos: at least (mem_len + n_s) x d.
// Optionally reports the per-head weight matrices.
inline ctrans::Tensor<double> naive_multihead_attention(const ctrans::Tensor<double>& h,
                                                        const ctrans::Tensor<double>& mem,
                                                        const NaiveAttnWeights& w,
                                                        const ctrans::Tensor<double>& relpos, long heads,
                                                        std::vector<ctrans::Tensor<double>>* weights_out = nullptr) {
    long n_s = h.dim(0), d = h.dim(1);
    long mem_len = mem.dim(0);
    long keys = mem_len + n_s;
    long dh = d / heads;
    ctrans::Tensor<double> full({keys, d});
    for (long r = 0; r < mem_len; ++r)
        for (long c = 0; c < d; ++c) full.at(r, c) = mem.at(r, c);
    for (long r = 0; r < n_s; ++r)
        for (long c = 0; c < d; ++c) full.at(mem_len + r, c) = h.at(r, c);

    ctrans::Tensor<double> q = naive_matmul(h, w.Wq);
    ctrans::Tensor<double> k = naive_matmul(full, w.Wk);
    ctrans::Tensor<double> v = naive_matmul(full, w.Wv);
    ctrans::Tensor<double> r = naive_matmul(relpos, w.Wr);

    ctrans::Tensor<double> merged({n_s, d});
    if (weights_out) weights_out->clear();
    for (long head = 0; head < heads; ++head) {
        long col = head * dh;
        ctrans::Tensor<double> wmat = ctrans::Tensor<double>::zeros({n_s, keys});
        for (long i = 0; i < n_s; ++i) {
            std::vector<double> scores(static_cast<size_t>(keys), 0.0);
            std::vector<bool> ok(static_cast<size_t>(keys), false);
            double mx = -1e300;
            for (long j = 0; j < keys; ++j) {
                long off = mem_len + i - j;
                if (off < 0) continue;  // future sequence position
                double ac = 0, bd = 0;
                for (long t = 0; t < dh; ++t) {
                    ac += (q.at(i, col + t) + w.u.at(0, col + t)) * k.at(j, col + t);
                    bd += (q.at(i, col + t) + w.v.at(0, col + t)) * r.at(off, col + t);
                }
                double s = (ac + bd) / std::sqrt(static_cast<double>(dh));
                scores[static_cast<size_t>(j)] = s;
                ok[static_cast<size_t>(j)] = true;
                mx = std::max(mx, s);
            }
            double sum = 0;
            for (long j = 0; j < keys; ++j) {
                if (ok[static_cast<size_t>(j)]) sum += std::exp(scores[static_cast<size_t>(j)] - mx);
            }
            for (long j = 0; j < keys; ++j) {
                if (!ok[static_cast<size_t>(j)]) continue;
                double weight = std::exp(scores[static_cast<size_t>(j)] - mx) / sum;
                wmat.at(i, j) = weight;
                for (long t = 0; t < dh; ++t) merged.at(i, col + t) += weight * v.at(j, col + t);
            }
        }
        if (weights_out) weights_out->push_back(wmat);
    }
    return naive_matmul(merged, w.Wo);
}

// Content attention of the reconstruction objective, brute force.
inline ctrans::Tensor<double> naive_content_attention(const ctrans::Tensor<double>& h,
                                                      const ctrans::Tensor<double>& m,
                                                      const ctrans::Tensor<double>& Q,
                                                      const ctrans::Tensor<double>& K,
                                                      const ctrans::Tensor<double>& V) {
    ctrans::Tensor<double> hq = naive_matmul(h, Q);
    ctrans::Tensor<double> mk = naive_matmul(m, K);
    ctrans::Tensor<double> mv = naive_matmul(m, V);
    long n = h.dim(0), k = m.dim(0), d = h.dim(1);
    ctrans::Tensor<double> out = ctrans::Tensor<double>::zeros({n, d});
    for (long i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<size_t>(k));
        double mx = -1e300;
        for (long j = 0; j < k; ++j) {
            double acc = 0;
            for (long t = 0; t < d; ++t) acc += hq.at(i, t) * mk.at(j, t);
            s[static_cast<size_t>(j)] = acc;
            mx = std::max(mx, acc);
        }
        double sum = 0;
        for (long j = 0; j < k; ++j) sum += std::exp(s[static_cast<size_t>(j)] - mx);
        for (long j = 0; j < k; ++j) {
            double weight = std::exp(s[static_cast<size_t>(j)] - mx) / sum;
            for (long t = 0; t < d; ++t) out.at(i, t) += weight * mv.at(j, t);
        }
    }
    return out;
}

}  // namespace testsupport
