#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "ctrans/attention.hpp"
#include "ctrans/autograd.hpp"

namespace ctrans {

// Compression functions f_c mapping n_s evicted rows to floor(n_s/c) coarse
// rows, plus the two auxiliary objectives that train the learnable variants:
// an auto-encoding reconstruction through a decoder g, and the
// attention-reconstruction objective that matches content attention over the
// compressed rows to content attention over the originals. Both objectives
// touch only compression parameters; the main network is isolated by
// stop-gradient on everything it owns.

enum class CompressionVariant { MaxPool, MeanPool, Conv, DilatedConv, MostUsed };
enum class CompressionObjective { Bptt, AutoEncoding, AttentionReconstruction };

inline const char* variant_name(CompressionVariant v) {
    switch (v) {
        case CompressionVariant::MaxPool: return "max_pool";
        case CompressionVariant::MeanPool: return "mean_pool";
        case CompressionVariant::Conv: return "conv";
        case CompressionVariant::DilatedConv: return "dilated_conv";
        case CompressionVariant::MostUsed: return "most_used";
    }
    return "?";
}

inline CompressionVariant variant_from_name(const std::string& s) {
    if (s == "max_pool") return CompressionVariant::MaxPool;
    if (s == "mean_pool") return CompressionVariant::MeanPool;
    if (s == "conv") return CompressionVariant::Conv;
    if (s == "dilated_conv") return CompressionVariant::DilatedConv;
    if (s == "most_used") return CompressionVariant::MostUsed;
    throw ConfigError("unknown compression variant: " + s);
}

inline const char* objective_name(CompressionObjective o) {
    switch (o) {
        case CompressionObjective::Bptt: return "bptt";
        case CompressionObjective::AutoEncoding: return "auto_encoding";
        case CompressionObjective::AttentionReconstruction: return "attention_reconstruction";
    }
    return "?";
}

inline CompressionObjective objective_from_name(const std::string& s) {
    if (s == "bptt") return CompressionObjective::Bptt;
    if (s == "auto_encoding") return CompressionObjective::AutoEncoding;
    if (s == "attention_reconstruction") return CompressionObjective::AttentionReconstruction;
    throw ConfigError("unknown compression objective: " + s);
}

// Pooling and most-used variants carry no learnable parameters; conv carries
// one kernel, dilated_conv three. The decoder g exists whenever the
// auto-encoding objective is active.
template <class T>
struct CompressionSpec {
    CompressionVariant variant = CompressionVariant::MeanPool;
    CompressionObjective objective = CompressionObjective::AutoEncoding;
    long c = 1;
    Var<T> conv_kernel;              // c x d x d (conv variant)
    Var<T> dil_kernel1, dil_kernel2; // 2 x d x d each (dilated_conv)
    Var<T> dil_agg;                  // c x d x d (dilated_conv aggregation)
    Var<T> decoder_kernel;           // c x d x d (auto-encoding decoder g)

    std::vector<Var<T>> learnable() const {
        std::vector<Var<T>> out;
        for (const Var<T>& p : {conv_kernel, dil_kernel1, dil_kernel2, dil_agg, decoder_kernel}) {
            if (p) out.push_back(p);
        }
        return out;
    }
};

// Identity-or-mean kernel: c = 1 starts at the identity map, c > 1 starts at
// the scaled mean so a fresh conv compressor behaves like mean pooling.
template <class T>
Tensor<T> mean_init_kernel(long c, long d) {
    Tensor<T> k = Tensor<T>::zeros({c, d, d});
    T w = T(1) / T(c);
    for (long t = 0; t < c; ++t) {
        for (long i = 0; i < d; ++i) k[(t * d + i) * d + i] = w;
    }
    return k;
}

// Width-2 kernel passing through its later row: stacked with left padding it
// reproduces the identity, so dilated_conv also starts as a mean-pool.
template <class T>
Tensor<T> shift_init_kernel(long d) {
    Tensor<T> k = Tensor<T>::zeros({2, d, d});
    for (long i = 0; i < d; ++i) k[(1 * d + i) * d + i] = T(1);
    return k;
}

// Decoder g starts by replicating each compressed row c times (the exact
// inverse of mean pooling on constant blocks).
template <class T>
Tensor<T> replicate_init_kernel(long c, long d) {
    Tensor<T> k = Tensor<T>::zeros({c, d, d});
    for (long t = 0; t < c; ++t) {
        for (long i = 0; i < d; ++i) k[(t * d + i) * d + i] = T(1);
    }
    return k;
}

template <class T>
CompressionSpec<T> make_compression_spec(CompressionVariant variant, CompressionObjective objective, long c, long d) {
    if (c < 1) throw ConfigError("compression rate c must be >= 1");
    CompressionSpec<T> spec;
    spec.variant = variant;
    spec.objective = objective;
    spec.c = c;
    if (variant == CompressionVariant::Conv) {
        spec.conv_kernel = make_param(mean_init_kernel<T>(c, d));
    } else if (variant == CompressionVariant::DilatedConv) {
        spec.dil_kernel1 = make_param(shift_init_kernel<T>(d));
        spec.dil_kernel2 = make_param(shift_init_kernel<T>(d));
        spec.dil_agg = make_param(mean_init_kernel<T>(c, d));
    }
    if (objective == CompressionObjective::AutoEncoding) {
        spec.decoder_kernel = make_param(replicate_init_kernel<T>(c, d));
    }
    return spec;
}

// Rows with the k largest usage values, re-emitted in original temporal
// order; ties keep the older (smaller-index) row.
template <class T>
Var<T> most_used_select(const Var<T>& old_mem, const std::vector<double>& usage, long k) {
    long n = old_mem->value.dim(0);
    if (k > n) throw DimensionError("most_used_select: k exceeds row count");
    if (static_cast<long>(usage.size()) != n) throw DimensionError("most_used_select: usage length mismatch");
    for (double u : usage) {
        if (u < 0) throw DataError("most_used_select: negative usage");
    }
    std::vector<long> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
        return usage[static_cast<size_t>(a)] > usage[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(k));
    std::sort(order.begin(), order.end());
    return gather_rows(old_mem, order);
}

namespace detail {

// Pooling over windows of c with stride c; when c does not divide n_s the
// final window absorbs the remainder so the output still has floor(n_s/c)
// rows covering every input row.
template <class T>
Var<T> pool_with_remainder(const Var<T>& x, PoolKind kind, long c) {
    long n = x->value.dim(0);
    long q = n / c, r = n % c;
    if (r == 0) return pool1d(x, kind, c, c);
    if (q == 1) return pool1d(x, kind, n, n);
    Var<T> head = pool1d(slice_rows(x, 0, (q - 1) * c), kind, c, c);
    Var<T> tail = pool1d(slice_rows(x, (q - 1) * c, c + r), kind, c + r, c + r);
    return concat_rows<T>({head, tail});
}

}  // namespace detail

// f_c : R^{n_s x d} -> R^{floor(n_s/c) x d}. usage is consulted only by the
// most_used variant.
template <class T>
Var<T> compress(const CompressionSpec<T>& spec, const Var<T>& old_mem, const std::vector<double>& usage) {
    long n = old_mem->value.dim(0), d = old_mem->value.dim(1);
    long c = spec.c;
    if (n < c) {
        throw DegenerateInputError("compress: " + std::to_string(n) + " rows with rate " + std::to_string(c));
    }
    long k = n / c;
    switch (spec.variant) {
        case CompressionVariant::MaxPool:
            return detail::pool_with_remainder(old_mem, PoolKind::Max, c);
        case CompressionVariant::MeanPool:
            return detail::pool_with_remainder(old_mem, PoolKind::Mean, c);
        case CompressionVariant::Conv:
            return conv1d(old_mem, spec.conv_kernel, c, 1);
        case CompressionVariant::DilatedConv: {
            // left-pad 3 rows so the stacked width-2 kernels (dilations 1, 2)
            // preserve length before the stride-c aggregation
            Var<T> padded = concat_rows<T>({constant(Tensor<T>::zeros({3, d})), old_mem});
            Var<T> y1 = conv1d(padded, spec.dil_kernel1, 1, 1);
            Var<T> y2 = conv1d(y1, spec.dil_kernel2, 1, 2);
            return conv1d(y2, spec.dil_agg, c, 1);
        }
        case CompressionVariant::MostUsed:
            return most_used_select(old_mem, usage, k);
    }
    throw ContractError("compress: unreachable");
}

// Decoder g: transposed temporal convolution, kernel width c and stride c,
// expanding floor(n_s/c) rows back to floor(n_s/c)*c rows.
template <class T>
Var<T> decode(const CompressionSpec<T>& spec, const Var<T>& new_cm) {
    if (!spec.decoder_kernel) throw ContractError("decode: spec has no decoder");
    return conv1d_transpose(new_cm, spec.decoder_kernel);
}

// L2 norm of the reconstruction residual old_mem - g(new_cm). Gradients reach
// f_c and g parameters only (old_mem enters detached at the call site). When
// c does not divide n_s the comparison covers the reconstructed
// floor(n_s/c)*c rows.
template <class T>
Var<T> auto_encoding_loss(const Var<T>& old_mem, const Var<T>& new_cm, const CompressionSpec<T>& spec) {
    Var<T> rec = decode(spec, new_cm);
    if (rec->value.dim(1) != old_mem->value.dim(1) || rec->value.dim(0) > old_mem->value.dim(0)) {
        throw DimensionError("auto_encoding_loss: reconstruction shape " + rec->value.shape_str() + " vs old_mem " +
                             old_mem->value.shape_str());
    }
    Var<T> target = rec->value.dim(0) == old_mem->value.dim(0) ? old_mem : slice_rows(old_mem, 0, rec->value.dim(0));
    return l2_norm(sub(stop_gradient(target), rec));
}

// Attention-reconstruction objective for one layer: compress the evicted
// rows and penalize the L2 gap between content attention onto the originals
// and onto the compression. h, old_mem, and the attention projections all
// enter under stop_gradient, so the only parameters that can receive
// gradient are those of f_c.
template <class T>
Var<T> attention_reconstruction_loss(const Var<T>& h, const Var<T>& old_mem, const std::vector<double>& old_usage,
                                     const AttentionParams<T>& params, const CompressionSpec<T>& spec,
                                     Var<T>* new_cm_out = nullptr) {
    Var<T> h_sg = stop_gradient(h);
    Var<T> old_sg = stop_gradient(old_mem);
    Var<T> Q = stop_gradient(params.Wq);
    Var<T> K = stop_gradient(params.Wk);
    Var<T> V = stop_gradient(params.Wv);
    Var<T> new_cm = compress(spec, old_sg, old_usage);
    if (new_cm_out) *new_cm_out = new_cm;
    Var<T> full = content_attention(h_sg, old_sg, Q, K, V);
    Var<T> comp = content_attention(h_sg, new_cm, Q, K, V);
    return l2_norm(sub(full, comp));
}

// Per-layer auxiliary loss values for one update step.
struct CompressionLossReport {
    std::vector<double> per_layer;
    CompressionVariant variant = CompressionVariant::MeanPool;
    uint64_t step = 0;
};

inline std::string compression_loss_csv_header() { return "layer,step,variant,loss\n"; }

inline std::string compression_loss_csv(const CompressionLossReport& rep) {
    std::string out;
    char line[128];
    for (size_t i = 0; i < rep.per_layer.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%llu,%s,%.10g\n", i, static_cast<unsigned long long>(rep.step),
                      variant_name(rep.variant), rep.per_layer[i]);
        out += line;
    }
    return out;
}

}  // namespace ctrans
