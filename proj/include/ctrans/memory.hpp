#pragma once

#include <vector>

#include "ctrans/attention.hpp"
#include "ctrans/autograd.hpp"

namespace ctrans {

// Dual-FIFO memory: per layer, a recent-activation cache m [n_m x d] and a
// compressed cache cm [n_cm x d], both zero-initialized and fixed-shape.
// Every window the oldest n_s rows of m are evicted, compressed into
// floor(n_s/c) rows appended to cm, and the window's layer inputs are pushed
// onto m. usage tracks the attention mass each m slot accumulated while
// resident (consumed by the most-used compressor); it shifts in lockstep
// with m and newly pushed slots start at zero.

template <class T>
struct LayerMemory {
    Var<T> m;                  // n_m x d
    Var<T> cm;                 // n_cm x d
    std::vector<double> usage; // n_m entries, >= 0
};

template <class T>
struct MemoryState {
    std::vector<LayerMemory<T>> layers;
    long n_m = 0, n_cm = 0, d = 0;
    long mem_fill = 0;  // slots of m holding pushed (non-initial) rows
    long cm_fill = 0;   // slots of cm written since init
    uint64_t steps = 0; // update_memories invocations

    long mem_len() const { return n_cm + n_m; }
};

template <class T>
MemoryState<T> init_state(long l, long n_m, long n_cm, long d) {
    if (l < 0 || n_m < 0 || n_cm < 0 || d < 0) throw ConfigError("init_state: sizes must be >= 0");
    MemoryState<T> st;
    st.n_m = n_m;
    st.n_cm = n_cm;
    st.d = d;
    st.layers.resize(static_cast<size_t>(l));
    for (auto& lm : st.layers) {
        lm.m = constant(Tensor<T>::zeros({n_m, d}));
        lm.cm = constant(Tensor<T>::zeros({n_cm, d}));
        lm.usage.assign(static_cast<size_t>(n_m), 0.0);
    }
    return st;
}

// Cuts any autograd history: replaces every cached tensor with a fresh
// constant holding the same values. Called at unroll boundaries.
template <class T>
void detach_state(MemoryState<T>& st) {
    for (auto& lm : st.layers) {
        lm.m = constant(Tensor<T>(lm.m->value));
        lm.cm = constant(Tensor<T>(lm.cm->value));
    }
}

template <class T>
MemoryState<T> clone_state(const MemoryState<T>& st) {
    MemoryState<T> out = st;
    detach_state(out);
    return out;
}

// Adds one window's attention mass to the usage counters of layer `layer`.
// Each m slot receives the weight it got, averaged over heads and queries.
template <class T>
void accumulate_usage(MemoryState<T>& st, long layer, const AttentionTrace<T>& trace) {
    auto& lm = st.layers[static_cast<size_t>(layer)];
    if (trace.per_head.empty() || st.n_m == 0) return;
    long heads = static_cast<long>(trace.per_head.size());
    long queries = trace.per_head[0].dim(0);
    double scale = 1.0 / (static_cast<double>(heads) * static_cast<double>(queries));
    for (const auto& w : trace.per_head) {
        for (long r = 0; r < w.dim(0); ++r) {
            for (long j = 0; j < st.n_m; ++j) {
                lm.usage[static_cast<size_t>(j)] += scale * static_cast<double>(w.at(r, st.n_cm + j));
            }
        }
    }
}

template <class T>
struct MemoryUpdate {
    std::vector<Var<T>> old_mem;          // evicted rows per layer, n_s x d
    std::vector<Var<T>> new_cm;           // compressed rows per layer, floor(n_s/c) x d
    std::vector<std::vector<double>> old_usage;  // usage of the evicted rows per layer
};

// One Algorithm-1 bookkeeping step for every layer. h_per_layer[i] is the
// window's input to layer i (n_s x d). compress_fn(layer, old_mem, old_usage)
// produces the compressed rows. When detach is set the state stores plain
// copies (the graph stays with the returned update only); otherwise the state
// keeps the graph-attached nodes.
template <class T, class CompressFn>
MemoryUpdate<T> update_memories(MemoryState<T>& st, const std::vector<Var<T>>& h_per_layer, long n_s,
                                CompressFn&& compress_fn, bool detach) {
    if (h_per_layer.size() != st.layers.size()) throw DimensionError("update_memories: layer count mismatch");
    if (n_s > st.n_m) throw ConfigError("update_memories: n_s exceeds n_m");
    MemoryUpdate<T> upd;
    upd.old_mem.reserve(st.layers.size());
    upd.new_cm.reserve(st.layers.size());
    upd.old_usage.reserve(st.layers.size());
    for (size_t i = 0; i < st.layers.size(); ++i) {
        auto& lm = st.layers[i];
        const Var<T>& h = h_per_layer[i];
        if (h->value.dim(0) != n_s || h->value.dim(1) != st.d) {
            throw DimensionError("update_memories: h shape " + h->value.shape_str());
        }
        Var<T> old_mem = slice_rows(lm.m, 0, n_s);
        std::vector<double> old_usage(lm.usage.begin(), lm.usage.begin() + n_s);
        // With no compressed cache there is nothing to compress into.
        Var<T> new_cm = st.n_cm > 0 ? compress_fn(static_cast<long>(i), old_mem, old_usage)
                                    : constant(Tensor<T>::zeros({0, st.d}));

        // m' = concat(m, h)[-n_m:]
        Var<T> kept = slice_rows(lm.m, n_s, st.n_m - n_s);
        Var<T> new_m = st.n_m > n_s ? concat_rows<T>({kept, h}) : h;
        // cm' = concat(cm, new_cm)[-n_cm:]
        long gained = new_cm->value.dim(0);
        Var<T> new_cm_state;
        if (st.n_cm > 0) {
            if (gained >= st.n_cm) {
                new_cm_state = slice_rows(new_cm, gained - st.n_cm, st.n_cm);
            } else {
                Var<T> kept_cm = slice_rows(lm.cm, gained, st.n_cm - gained);
                new_cm_state = concat_rows<T>({kept_cm, new_cm});
            }
        } else {
            new_cm_state = constant(Tensor<T>::zeros({0, st.d}));
        }
        if (detach) {
            lm.m = constant(Tensor<T>(new_m->value));
            lm.cm = constant(Tensor<T>(new_cm_state->value));
        } else {
            lm.m = new_m;
            lm.cm = new_cm_state;
        }
        // usage shifts with m; fresh slots start unused
        std::vector<double> new_usage(lm.usage.begin() + n_s, lm.usage.end());
        new_usage.resize(static_cast<size_t>(st.n_m), 0.0);
        lm.usage = std::move(new_usage);

        upd.old_mem.push_back(std::move(old_mem));
        upd.new_cm.push_back(std::move(new_cm));
        upd.old_usage.push_back(std::move(old_usage));
    }
    st.mem_fill = std::min(st.n_m, st.mem_fill + n_s);
    if (!st.layers.empty()) {
        long gained = upd.new_cm[0]->value.dim(0);
        st.cm_fill = std::min(st.n_cm, st.cm_fill + gained);
    }
    st.steps += 1;
    return upd;
}

// Maximum token distance information can propagate: l * (n_m + c * n_cm).
inline long temporal_range(long l, long n_m, long n_cm, long c) {
    if (l < 0 || n_m < 0 || n_cm < 0 || c < 0) throw ConfigError("temporal_range: sizes must be >= 0");
    return l * (n_m + c * n_cm);
}

// Score evaluations per layer per head: n_s^2 + n_s * (n_m + n_cm).
inline long attention_cost(long n_s, long n_m, long n_cm) {
    if (n_s < 0 || n_m < 0 || n_cm < 0) throw ConfigError("attention_cost: sizes must be >= 0");
    return n_s * n_s + n_s * (n_m + n_cm);
}

struct RangeReport {
    long max_temporal_range = 0;
    long attention_cost = 0;
};

inline RangeReport range_report(long l, long n_s, long n_m, long n_cm, long c) {
    RangeReport r;
    r.max_temporal_range = temporal_range(l, n_m, n_cm, c);
    r.attention_cost = attention_cost(n_s, n_m, n_cm);
    return r;
}

}  // namespace ctrans
