#pragma once

#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctrans/autograd.hpp"
#include "ctrans/relpos.hpp"

namespace ctrans {

// Multi-head attention over [compressed memory; memory; sequence] with
// relative positional scores, plus the plain content-based attention used by
// the compression-reconstruction objective, and the bucket aggregation used
// for attention analysis.

template <class T>
struct AttentionParams {
    Var<T> Wq, Wk, Wv, Wo;  // d x d each
    Var<T> Wr;              // d x d, projects the sinusoidal table
    Var<T> u, v;            // 1 x d global content / position biases
};

// Per-head post-softmax weights, one matrix [n_s x (mem_len + n_s)] per head.
// Rows sum to 1 over unmasked keys; masked entries are exactly 0.
template <class T>
struct AttentionTrace {
    std::vector<Tensor<T>> per_head;
};

// Key axis layout shared by every layer of a forward pass: the causal mask
// and the relative-offset index of each (query, key) pair. Key j sits at
// absolute slot j; query i sits at slot mem_len + i; offset = mem_len + i - j.
// The oldest compressed-memory slot therefore carries the largest offset and
// offsets strictly decrease toward the query itself (offset 0).
struct AttentionLayout {
    long n_s = 0;
    long mem_len = 0;
    std::shared_ptr<const std::vector<uint8_t>> mask;   // n_s x (mem_len+n_s), 1 = attend
    std::shared_ptr<const std::vector<long>> offsets;   // same shape; masked slots clamped to 0
};

inline long relative_offset(long query, long key, long mem_len) { return mem_len + query - key; }

inline AttentionLayout make_attention_layout(long n_s, long mem_len) {
    if (n_s < 1 || mem_len < 0) throw DimensionError("make_attention_layout: n_s >= 1, mem_len >= 0");
    long keys = mem_len + n_s;
    auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n_s * keys));
    auto offsets = std::make_shared<std::vector<long>>(static_cast<size_t>(n_s * keys));
    for (long i = 0; i < n_s; ++i) {
        for (long j = 0; j < keys; ++j) {
            long off = relative_offset(i, j, mem_len);
            bool visible = off >= 0;  // memory slots and sequence positions <= i
            (*mask)[static_cast<size_t>(i * keys + j)] = visible ? 1 : 0;
            (*offsets)[static_cast<size_t>(i * keys + j)] = visible ? off : 0;
        }
    }
    AttentionLayout layout;
    layout.n_s = n_s;
    layout.mem_len = mem_len;
    layout.mask = std::move(mask);
    layout.offsets = std::move(offsets);
    return layout;
}

template <class T>
struct MultiheadOptions {
    long heads = 1;
    bool want_trace = false;
    double dropout_rate = 0.0;       // applied to post-softmax weights
    std::mt19937_64* rng = nullptr;  // required when dropout_rate > 0
};

// h: [n_s x d] layer input; mem: [(mem_len) x d] concat(cm, m), possibly
// zero rows at cold start (attended like any other key). Scores combine the
// content term (q + u) k^T with the position term (q + v) r^T routed through
// the per-pair offset table, scaled by 1/sqrt(d/H).
template <class T>
Var<T> multihead_attention(const Var<T>& h, const Var<T>& mem, const AttentionParams<T>& params,
                           const RelPosEncoding<T>& relpos, const AttentionLayout& layout,
                           const MultiheadOptions<T>& opts, AttentionTrace<T>* trace = nullptr) {
    long n_s = h->value.dim(0), d = h->value.dim(1);
    long H = opts.heads;
    if (H < 1 || d % H != 0) throw DimensionError("multihead_attention: d must be divisible by heads");
    if (mem->value.rank() != 2 || mem->value.dim(1) != d) {
        throw DimensionError("multihead_attention: mem width " + mem->value.shape_str() + " vs d " + std::to_string(d));
    }
    long mem_len = mem->value.dim(0);
    if (layout.n_s != n_s || layout.mem_len != mem_len) throw DimensionError("multihead_attention: layout mismatch");
    long keys = mem_len + n_s;
    long need = mem_len + n_s;  // offsets range over [0, mem_len + n_s - 1]
    if (relpos.max_offset() < need) {
        throw DimensionError("multihead_attention: relpos table too small (" + std::to_string(relpos.max_offset()) +
                             " rows, need " + std::to_string(need) + ")");
    }
    long dh = d / H;
    T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

    Var<T> q = matmul(h, params.Wq);
    Var<T> all = mem_len > 0 ? concat_rows<T>({mem, h}) : h;
    Var<T> k = matmul(all, params.Wk);
    Var<T> v = matmul(all, params.Wv);
    Var<T> rel = constant(Tensor<T>(relpos.table));
    Var<T> r = matmul(slice_rows(rel, 0, need), params.Wr);

    if (trace) trace->per_head.clear();
    std::vector<Var<T>> head_outputs;
    head_outputs.reserve(static_cast<size_t>(H));
    for (long head = 0; head < H; ++head) {
        long col = head * dh;
        Var<T> qh = slice_cols(q, col, dh);
        Var<T> kh = slice_cols(k, col, dh);
        Var<T> vh = slice_cols(v, col, dh);
        Var<T> rh = slice_cols(r, col, dh);
        Var<T> uh = slice_cols(params.u, col, dh);
        Var<T> vbh = slice_cols(params.v, col, dh);
        Var<T> content = matmul_nt(add_rowvec(qh, uh), kh);          // n_s x keys
        Var<T> pos_all = matmul_nt(add_rowvec(qh, vbh), rh);         // n_s x need
        Var<T> pos = gather_cols(pos_all, layout.offsets, keys);     // routed per (i, j)
        Var<T> scores = scale(add(content, pos), inv_sqrt_dh);
        Var<T> weights = masked_softmax_rows(scores, layout.mask);
        if (trace) trace->per_head.push_back(weights->value);
        if (opts.dropout_rate > 0.0) {
            if (!opts.rng) throw ContractError("multihead_attention: dropout requires an rng");
            weights = dropout(weights, opts.dropout_rate, *opts.rng);
        }
        head_outputs.push_back(matmul(weights, vh));
    }
    Var<T> merged = H == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return matmul(merged, params.Wo);
}

// Content-based attention of the reconstruction objective: sigma((hQ)(mK)^T)(mV).
// Single projection (no head split), no positional terms, no mask, no scaling;
// every query attends to all of m.
template <class T>
Var<T> content_attention(const Var<T>& h, const Var<T>& m, const Var<T>& Q, const Var<T>& K, const Var<T>& V) {
    if (m->value.dim(0) == 0) throw DegenerateInputError("content_attention: empty key set");
    Var<T> scores = matmul_nt(matmul(h, Q), matmul(m, K));
    Var<T> weights = softmax(scores, 1);
    return matmul(weights, matmul(m, V));
}

// ---------------------------------------------------------------------------
// bucket analysis

struct BucketStat {
    std::string region;
    int bucket_index = 0;  // 0 = oldest sixth of the region
    double mean = 0.0;
    double stderr_1sigma = 0.0;
    long count = 0;
};

// Contiguous partition of `size` columns into `groups` groups whose sizes
// differ by at most 1, earlier groups larger. Returns group start offsets
// plus a final sentinel equal to size.
inline std::vector<long> partition_bounds(long size, long groups) {
    std::vector<long> bounds(static_cast<size_t>(groups) + 1, 0);
    long base = size / groups, rem = size % groups;
    for (long g = 0; g < groups; ++g) bounds[static_cast<size_t>(g) + 1] = bounds[static_cast<size_t>(g)] + base + (g < rem ? 1 : 0);
    return bounds;
}

// Element-level aggregation of post-softmax weights into 18 buckets: six per
// region (compressed memory, memory, sequence), ordered oldest to newest.
// Every matrix element in a bucket's column range counts, including the exact
// zeros that causal masking leaves in the sequence region. stderr is the
// 1 sigma standard error of the element population.
template <class T>
std::vector<BucketStat> attention_buckets(const std::vector<AttentionTrace<T>>& traces, long n_cm, long n_m,
                                          long n_s) {
    if (traces.empty()) throw DegenerateInputError("attention_buckets: no traces");
    constexpr long kGroups = 6;
    struct Region {
        const char* name;
        long start;
        long size;
    };
    const Region regions[3] = {
        {"compressed_memory", 0, n_cm},
        {"memory", n_cm, n_m},
        {"sequence", n_cm + n_m, n_s},
    };
    long keys = n_cm + n_m + n_s;
    std::vector<BucketStat> out;
    out.reserve(18);
    for (const Region& reg : regions) {
        std::vector<long> bounds = partition_bounds(reg.size, kGroups);
        std::vector<double> sum(kGroups, 0.0), sumsq(kGroups, 0.0);
        std::vector<long> count(kGroups, 0);
        for (const auto& trace : traces) {
            for (const auto& w : trace.per_head) {
                if (w.dim(1) != keys) {
                    throw DimensionError("attention_buckets: trace has " + std::to_string(w.dim(1)) +
                                         " keys, expected " + std::to_string(keys));
                }
                for (long g = 0; g < kGroups; ++g) {
                    for (long c = reg.start + bounds[static_cast<size_t>(g)];
                         c < reg.start + bounds[static_cast<size_t>(g) + 1]; ++c) {
                        for (long r = 0; r < w.dim(0); ++r) {
                            double x = static_cast<double>(w.at(r, c));
                            sum[static_cast<size_t>(g)] += x;
                            sumsq[static_cast<size_t>(g)] += x * x;
                            ++count[static_cast<size_t>(g)];
                        }
                    }
                }
            }
        }
        for (long g = 0; g < kGroups; ++g) {
            BucketStat bs;
            bs.region = reg.name;
            bs.bucket_index = static_cast<int>(g);
            bs.count = count[static_cast<size_t>(g)];
            if (bs.count > 0) {
                double n = static_cast<double>(bs.count);
                bs.mean = sum[static_cast<size_t>(g)] / n;
                if (bs.count > 1) {
                    double var = (sumsq[static_cast<size_t>(g)] - n * bs.mean * bs.mean) / (n - 1.0);
                    bs.stderr_1sigma = std::sqrt(std::max(0.0, var) / n);
                }
            }
            out.push_back(std::move(bs));
        }
    }
    return out;
}

inline std::string bucket_csv(const std::vector<BucketStat>& stats) {
    std::string out = "region,bucket_index,mean,stderr\n";
    char line[160];
    for (const auto& s : stats) {
        std::snprintf(line, sizeof(line), "%s,%d,%.10g,%.10g\n", s.region.c_str(), s.bucket_index, s.mean,
                      s.stderr_1sigma);
        out += line;
    }
    return out;
}

}  // namespace ctrans
