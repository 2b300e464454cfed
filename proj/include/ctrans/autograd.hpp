#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctrans/tensor.hpp"

namespace ctrans {

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op returns a new node holding its forward value and a closure that
// scatters the node's gradient into its parents. backward() topologically
// sorts the subgraph reachable from a scalar loss and runs the closures in
// reverse. Leaf nodes (parameters) keep their gradient buffers across calls
// so gradients accumulate until the trainer resets them; interior buffers are
// re-zeroed on every backward pass.
//
// Graph construction and backward are single-threaded per graph. Nodes with
// requires_grad == false are immutable after creation and may be shared
// read-only across threads.

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<Var<T>> parents;
    std::function<void(const Tensor<T>&)> backprop;  // receives this node's gradient

    Tensor<T>& ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void zero_grad() {
        if (grad.size() == value.size()) grad.fill(T(0));
    }
};

// Thread-local switch: while disabled, every op produces constant nodes and
// no graph is recorded (evaluation mode).
inline bool& autograd_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(autograd_enabled_flag()) { autograd_enabled_flag() = false; }
    ~NoGradGuard() { autograd_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

template <class T>
Var<T> make_param(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->is_leaf = true;
    return n;
}

namespace detail {

template <class T>
bool track(std::initializer_list<Var<T>> parents) {
    if (!autograd_enabled_flag()) return false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) return true;
    }
    return false;
}

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(const Tensor<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return n;
}

}  // namespace detail

// Forward identity whose backward contributes nothing: the result is a fresh
// constant, disconnected from the graph of x.
template <class T>
Var<T> stop_gradient(const Var<T>& x) {
    return constant(Tensor<T>(x->value));
}

template <class T>
void backward(const Var<T>& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + loss->value.shape_str());
    }
    // Topological order of the requires_grad subgraph via iterative DFS.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
        Node<T>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    if (loss->requires_grad) {
        stack.push_back({loss.get(), 0});
        seen.insert(loss.get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node<T>* p = f.node->parents[f.next_parent++].get();
            if (p && p->requires_grad && seen.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    // Interior gradients restart from zero on every call; leaves accumulate.
    for (Node<T>* n : order) {
        n->ensure_grad();
        if (!n->is_leaf) n->zero_grad();
    }
    if (!loss->requires_grad) return;  // loss does not depend on any parameter
    loss->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop) n->backprop(n->grad);
    }
}

template <class T>
void zero_grads(std::span<const Var<T>> params) {
    for (const auto& p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// elementwise and shape ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) {
        throw DimensionError("add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor<T> out = a->value;
    axpy(out, b->value);
    if (!detail::track<T>({a, b})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) axpy(a->ensure_grad(), g);
        if (b->requires_grad) axpy(b->ensure_grad(), g);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) {
        throw DimensionError("sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor<T> out = a->value;
    axpy(out, b->value, T(-1));
    if (!detail::track<T>({a, b})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) axpy(a->ensure_grad(), g);
        if (b->requires_grad) axpy(b->ensure_grad(), g, T(-1));
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) {
        throw DimensionError("mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor<T> out = a->value;
    for (long i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    if (!detail::track<T>({a, b})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) {
            Tensor<T>& ga = a->ensure_grad();
            for (long i = 0; i < g.size(); ++i) ga[i] += g[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor<T>& gb = b->ensure_grad();
            for (long i = 0; i < g.size(); ++i) gb[i] += g[i] * a->value[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.size(); ++i) out[i] *= s;
    if (!detail::track<T>({a})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a}, [a, s](const Tensor<T>& g) {
        if (a->requires_grad) axpy(a->ensure_grad(), g, s);
    });
}

// x[n x d] + v broadcast over rows; v may be shaped [d] or [1 x d].
template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
    long n = x->value.dim(0), d = x->value.dim(1);
    if (v->value.size() != d) {
        throw DimensionError("add_rowvec: vector size " + v->value.shape_str() + " vs cols " + std::to_string(d));
    }
    Tensor<T> out = x->value;
    for (long r = 0; r < n; ++r) {
        for (long c = 0; c < d; ++c) out.at(r, c) += v->value[c];
    }
    if (!detail::track<T>({x, v})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x, v}, [x, v, n, d](const Tensor<T>& g) {
        if (x->requires_grad) axpy(x->ensure_grad(), g);
        if (v->requires_grad) {
            Tensor<T>& gv = v->ensure_grad();
            for (long r = 0; r < n; ++r) {
                for (long c = 0; c < d; ++c) gv[c] += g.at(r, c);
            }
        }
    });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2) throw DimensionError("matmul: rank-2 tensors required");
    if (a->value.dim(1) != b->value.dim(0)) {
        throw DimensionError("matmul: inner dims " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor<T> out({a->value.dim(0), b->value.dim(1)});
    gemm_nn(a->value, b->value, out);
    if (!detail::track<T>({a, b})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) gemm_nt(g, b->value, a->ensure_grad(), true);   // dA += g B^T
        if (b->requires_grad) gemm_tn(a->value, g, b->ensure_grad(), true);   // dB += A^T g
    });
}

// a(m x k) * b(n x k)^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2) throw DimensionError("matmul_nt: rank-2 tensors required");
    if (a->value.dim(1) != b->value.dim(1)) {
        throw DimensionError("matmul_nt: inner dims " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor<T> out({a->value.dim(0), b->value.dim(0)});
    gemm_nt(a->value, b->value, out);
    if (!detail::track<T>({a, b})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) gemm_nn(g, b->value, a->ensure_grad(), true);   // dA += g B
        if (b->requires_grad) gemm_tn(g, a->value, b->ensure_grad(), true);   // dB += g^T A
    });
}

template <class T>
Var<T> slice_rows(const Var<T>& x, long start, long len) {
    long n = x->value.dim(0), d = x->value.dim(1);
    if (start < 0 || len < 0 || start + len > n) throw DimensionError("slice_rows: out of range");
    Tensor<T> out({len, d});
    std::copy_n(x->value.data() + start * d, len * d, out.data());
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, start, d, len](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        T* dst = gx.data() + start * d;
        const T* src = g.data();
        for (long i = 0; i < len * d; ++i) dst[i] += src[i];
    });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, long start, long len) {
    long n = x->value.dim(0), d = x->value.dim(1);
    if (start < 0 || len < 0 || start + len > d) throw DimensionError("slice_cols: out of range");
    Tensor<T> out({n, len});
    for (long r = 0; r < n; ++r) {
        std::copy_n(x->value.data() + r * d + start, len, out.data() + r * len);
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, start, n, d, len](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (long r = 0; r < n; ++r) {
            T* dst = gx.data() + r * d + start;
            const T* src = g.data() + r * len;
            for (long i = 0; i < len; ++i) dst[i] += src[i];
        }
    });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DegenerateInputError("concat_rows: no inputs");
    long d = parts[0]->value.dim(1), n = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(1) != d) throw DimensionError("concat_rows: column mismatch");
        n += p->value.dim(0);
    }
    Tensor<T> out({n, d});
    long row = 0;
    for (const auto& p : parts) {
        std::copy_n(p->value.data(), p->value.size(), out.data() + row * d);
        row += p->value.dim(0);
    }
    bool rg = false;
    if (autograd_enabled_flag()) {
        for (const auto& p : parts) rg = rg || p->requires_grad;
    }
    if (!rg) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), parts, [parts, d](const Tensor<T>& g) {
        long row = 0;
        for (const auto& p : parts) {
            long rows = p->value.dim(0);
            if (p->requires_grad) {
                Tensor<T>& gp = p->ensure_grad();
                const T* src = g.data() + row * d;
                for (long i = 0; i < rows * d; ++i) gp.data()[i] += src[i];
            }
            row += rows;
        }
    });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DegenerateInputError("concat_cols: no inputs");
    long n = parts[0]->value.dim(0), d = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(0) != n) throw DimensionError("concat_cols: row mismatch");
        d += p->value.dim(1);
    }
    Tensor<T> out({n, d});
    long col = 0;
    for (const auto& p : parts) {
        long pc = p->value.dim(1);
        for (long r = 0; r < n; ++r) {
            std::copy_n(p->value.data() + r * pc, pc, out.data() + r * d + col);
        }
        col += pc;
    }
    bool rg = false;
    if (autograd_enabled_flag()) {
        for (const auto& p : parts) rg = rg || p->requires_grad;
    }
    if (!rg) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), parts, [parts, n, d](const Tensor<T>& g) {
        long col = 0;
        for (const auto& p : parts) {
            long pc = p->value.dim(1);
            if (p->requires_grad) {
                Tensor<T>& gp = p->ensure_grad();
                for (long r = 0; r < n; ++r) {
                    for (long c = 0; c < pc; ++c) gp.at(r, c) += g.at(r, col + c);
                }
            }
            col += pc;
        }
    });
}

// Row gather: out[i] = x[idx[i]]. Used for embedding lookup and usage-based
// slot selection. Backward scatter-adds, so repeated indices accumulate.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<long> idx) {
    long n = x->value.dim(0), d = x->value.dim(1);
    for (long i : idx) {
        if (i < 0 || i >= n) throw DataError("gather_rows: index " + std::to_string(i) + " out of range");
    }
    Tensor<T> out({static_cast<long>(idx.size()), d});
    for (size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(x->value.data() + idx[r] * d, d, out.data() + static_cast<long>(r) * d);
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, idx = std::move(idx), d](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            T* dst = gx.data() + idx[r] * d;
            const T* src = g.data() + static_cast<long>(r) * d;
            for (long c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

// Column gather with a per-element index matrix: out[i][j] = x[i][idx[i][j]].
// This is how relative-position scores are routed from per-offset columns to
// per-key columns.
template <class T>
Var<T> gather_cols(const Var<T>& x, std::shared_ptr<const std::vector<long>> idx, long out_cols) {
    long n = x->value.dim(0), k = x->value.dim(1);
    if (static_cast<long>(idx->size()) != n * out_cols) throw DimensionError("gather_cols: index size mismatch");
    Tensor<T> out({n, out_cols});
    for (long r = 0; r < n; ++r) {
        for (long c = 0; c < out_cols; ++c) {
            long j = (*idx)[static_cast<size_t>(r * out_cols + c)];
            if (j < 0 || j >= k) throw DataError("gather_cols: index out of range");
            out.at(r, c) = x->value.at(r, j);
        }
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, idx, n, out_cols](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (long r = 0; r < n; ++r) {
            for (long c = 0; c < out_cols; ++c) {
                gx.at(r, (*idx)[static_cast<size_t>(r * out_cols + c)]) += g.at(r, c);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities and reductions

template <class T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out = x->value;
    for (long i = 0; i < out.size(); ++i) {
        T v = out[i];
        out[i] = T(0.5) * v * (T(1) + std::erf(v / T(M_SQRT2)));
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (long i = 0; i < g.size(); ++i) {
            T v = x->value[i];
            T cdf = T(0.5) * (T(1) + std::erf(v / T(M_SQRT2)));
            T pdf = T(inv_sqrt_2pi) * std::exp(T(-0.5) * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

// Inverted dropout; identity when rate == 0. Mask is drawn from the supplied
// generator so training remains reproducible and resumable.
template <class T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x->value.size()));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    T keep_scale = T(1.0 / (1.0 - rate));
    Tensor<T> out = x->value;
    for (long i = 0; i < out.size(); ++i) {
        T m = unif(rng) < rate ? T(0) : keep_scale;
        (*mask)[static_cast<size_t>(i)] = m;
        out[i] *= m;
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, mask](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (long i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T s = T(0);
    for (long i = 0; i < x->value.size(); ++i) s += x->value[i];
    if (!detail::track<T>({x})) return constant(Tensor<T>::scalar(s));
    return detail::make_node<T>(Tensor<T>::scalar(s), {x}, [x](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (long i = 0; i < gx.size(); ++i) gx[i] += g[0];
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / T(x->value.size()));
}

// Frobenius norm sqrt(sum x^2). The gradient at the origin is defined as 0 so
// perfect reconstructions stay differentiable-in-practice.
template <class T>
Var<T> l2_norm(const Var<T>& x) {
    T ss = T(0);
    for (long i = 0; i < x->value.size(); ++i) ss += x->value[i] * x->value[i];
    T norm = std::sqrt(ss);
    if (!detail::track<T>({x})) return constant(Tensor<T>::scalar(norm));
    return detail::make_node<T>(Tensor<T>::scalar(norm), {x}, [x, norm](const Tensor<T>& g) {
        if (!x->requires_grad || norm == T(0)) return;
        Tensor<T>& gx = x->ensure_grad();
        T inv = g[0] / norm;
        for (long i = 0; i < gx.size(); ++i) gx[i] += x->value[i] * inv;
    });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / cross entropy

template <class T>
Var<T> softmax(const Var<T>& x, int axis = 1) {
    Tensor<T> y = softmax_values(x->value, axis);
    if (!detail::track<T>({x})) return constant(std::move(y));
    auto node = detail::make_node<T>(std::move(y), {x}, nullptr);
    Node<T>* raw = node.get();
    node->backprop = [x, raw, axis](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        const Tensor<T>& y = raw->value;
        Tensor<T>& gx = x->ensure_grad();
        if (y.rank() == 1 || axis == 1) {
            long n = y.rank() == 1 ? 1 : y.dim(0);
            long m = y.rank() == 1 ? y.dim(0) : y.dim(1);
            for (long r = 0; r < n; ++r) {
                const T* yr = y.data() + r * m;
                const T* gr = g.data() + r * m;
                T dot = T(0);
                for (long c = 0; c < m; ++c) dot += yr[c] * gr[c];
                T* o = gx.data() + r * m;
                for (long c = 0; c < m; ++c) o[c] += yr[c] * (gr[c] - dot);
            }
        } else {
            long n = y.dim(0), m = y.dim(1);
            for (long c = 0; c < m; ++c) {
                T dot = T(0);
                for (long r = 0; r < n; ++r) dot += y.at(r, c) * g.at(r, c);
                for (long r = 0; r < n; ++r) gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
        }
    };
    return node;
}

// Row softmax restricted to mask != 0 columns; masked outputs are exactly 0.
// Each row must have at least one unmasked column.
template <class T>
Var<T> masked_softmax_rows(const Var<T>& x, std::shared_ptr<const std::vector<uint8_t>> mask) {
    long n = x->value.dim(0), m = x->value.dim(1);
    if (static_cast<long>(mask->size()) != n * m) throw DimensionError("masked_softmax_rows: mask size mismatch");
    Tensor<T> y({n, m});
    for (long r = 0; r < n; ++r) {
        const uint8_t* mr = mask->data() + r * m;
        T mx = T(0);
        bool any = false;
        for (long c = 0; c < m; ++c) {
            if (mr[c]) {
                mx = any ? std::max(mx, x->value.at(r, c)) : x->value.at(r, c);
                any = true;
            }
        }
        if (!any) throw DegenerateInputError("masked_softmax_rows: fully masked row " + std::to_string(r));
        T sum = T(0);
        for (long c = 0; c < m; ++c) {
            if (mr[c]) {
                T e = std::exp(x->value.at(r, c) - mx);
                y.at(r, c) = e;
                sum += e;
            }
        }
        for (long c = 0; c < m; ++c) {
            if (mr[c]) y.at(r, c) /= sum;
        }
    }
    if (!detail::track<T>({x})) return constant(std::move(y));
    auto node = detail::make_node<T>(std::move(y), {x}, nullptr);
    Node<T>* raw = node.get();
    node->backprop = [x, raw, mask, n, m](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        const Tensor<T>& y = raw->value;
        Tensor<T>& gx = x->ensure_grad();
        for (long r = 0; r < n; ++r) {
            const uint8_t* mr = mask->data() + r * m;
            T dot = T(0);
            for (long c = 0; c < m; ++c) {
                if (mr[c]) dot += y.at(r, c) * g.at(r, c);
            }
            for (long c = 0; c < m; ++c) {
                if (mr[c]) gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
        }
    };
    return node;
}

// Per-row normalisation to zero mean / unit variance followed by a learned
// affine map. eps guards zero-variance rows.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
    long n = x->value.dim(0), d = x->value.dim(1);
    if (gain->value.size() != d || bias->value.size() != d) {
        throw DimensionError("layer_norm: gain/bias size must equal row width");
    }
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>({n, d}));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    Tensor<T> out({n, d});
    for (long r = 0; r < n; ++r) {
        T mu = T(0);
        for (long c = 0; c < d; ++c) mu += x->value.at(r, c);
        mu /= T(d);
        T var = T(0);
        for (long c = 0; c < d; ++c) {
            T dv = x->value.at(r, c) - mu;
            var += dv * dv;
        }
        var /= T(d);
        T istd = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = istd;
        for (long c = 0; c < d; ++c) {
            T h = (x->value.at(r, c) - mu) * istd;
            xhat->at(r, c) = h;
            out.at(r, c) = gain->value[c] * h + bias->value[c];
        }
    }
    if (!detail::track<T>({x, gain, bias})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std, n, d](const Tensor<T>& g) {
        for (long r = 0; r < n; ++r) {
            T istd = (*inv_std)[static_cast<size_t>(r)];
            // dxhat = g * gain; reduce for the two row statistics
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (long c = 0; c < d; ++c) {
                T dxh = g.at(r, c) * gain->value[c];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xhat->at(r, c);
            }
            if (x->requires_grad) {
                Tensor<T>& gx = x->ensure_grad();
                for (long c = 0; c < d; ++c) {
                    T dxh = g.at(r, c) * gain->value[c];
                    gx.at(r, c) += istd * (dxh - (sum_dxhat + xhat->at(r, c) * sum_dxhat_xhat) / T(d));
                }
            }
        }
        if (gain->requires_grad) {
            Tensor<T>& gg = gain->ensure_grad();
            for (long r = 0; r < n; ++r) {
                for (long c = 0; c < d; ++c) gg[c] += g.at(r, c) * xhat->at(r, c);
            }
        }
        if (bias->requires_grad) {
            Tensor<T>& gb = bias->ensure_grad();
            for (long r = 0; r < n; ++r) {
                for (long c = 0; c < d; ++c) gb[c] += g.at(r, c);
            }
        }
    });
}

// Valid (no padding) temporal convolution over the first axis.
// x: [n x d_in], kernel: [w x d_in x d_out], out: [floor((n - w_eff)/stride)+1 x d_out]
// with w_eff = (w-1)*dilation + 1.
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernel, long stride = 1, long dilation = 1) {
    if (kernel->value.rank() != 3) throw DimensionError("conv1d: kernel must be [w x d_in x d_out]");
    long n = x->value.dim(0), d_in = x->value.dim(1);
    long w = kernel->value.dim(0), kd_in = kernel->value.dim(1), d_out = kernel->value.dim(2);
    if (kd_in != d_in) throw DimensionError("conv1d: kernel d_in mismatch");
    if (stride < 1 || dilation < 1) throw ConfigError("conv1d: stride and dilation must be >= 1");
    long w_eff = (w - 1) * dilation + 1;
    if (n < w_eff) {
        throw DegenerateInputError("conv1d: input length " + std::to_string(n) + " shorter than kernel extent " +
                                   std::to_string(w_eff));
    }
    long t_out = (n - w_eff) / stride + 1;
    Tensor<T> out({t_out, d_out});
    const T* kv = kernel->value.data();
    for (long t = 0; t < t_out; ++t) {
        for (long k = 0; k < w; ++k) {
            const T* xr = x->value.data() + (t * stride + k * dilation) * d_in;
            const T* kr = kv + k * d_in * d_out;
            T* o = out.data() + t * d_out;
            for (long i = 0; i < d_in; ++i) {
                T xi = xr[i];
                const T* krow = kr + i * d_out;
                for (long j = 0; j < d_out; ++j) o[j] += xi * krow[j];
            }
        }
    }
    if (!detail::track<T>({x, kernel})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x, kernel},
                                [x, kernel, stride, dilation, w, d_in, d_out, t_out](const Tensor<T>& g) {
        for (long t = 0; t < t_out; ++t) {
            for (long k = 0; k < w; ++k) {
                long row = t * stride + k * dilation;
                const T* go = g.data() + t * d_out;
                if (x->requires_grad) {
                    Tensor<T>& gx = x->ensure_grad();
                    T* gxr = gx.data() + row * d_in;
                    const T* kr = kernel->value.data() + k * d_in * d_out;
                    for (long i = 0; i < d_in; ++i) {
                        T acc = T(0);
                        const T* krow = kr + i * d_out;
                        for (long j = 0; j < d_out; ++j) acc += go[j] * krow[j];
                        gxr[i] += acc;
                    }
                }
                if (kernel->requires_grad) {
                    Tensor<T>& gk = kernel->ensure_grad();
                    T* gkr = gk.data() + k * d_in * d_out;
                    const T* xr = x->value.data() + row * d_in;
                    for (long i = 0; i < d_in; ++i) {
                        T xi = xr[i];
                        T* gkrow = gkr + i * d_out;
                        for (long j = 0; j < d_out; ++j) gkrow[j] += xi * go[j];
                    }
                }
            }
        }
    });
}

// Transposed counterpart of conv1d with width == stride (no overlap):
// x: [t x d_in], kernel: [w x d_in x d_out], out: [t*w x d_out].
template <class T>
Var<T> conv1d_transpose(const Var<T>& x, const Var<T>& kernel) {
    if (kernel->value.rank() != 3) throw DimensionError("conv1d_transpose: kernel must be [w x d_in x d_out]");
    long t_in = x->value.dim(0), d_in = x->value.dim(1);
    long w = kernel->value.dim(0), kd_in = kernel->value.dim(1), d_out = kernel->value.dim(2);
    if (kd_in != d_in) throw DimensionError("conv1d_transpose: kernel d_in mismatch");
    Tensor<T> out({t_in * w, d_out});
    for (long t = 0; t < t_in; ++t) {
        const T* xr = x->value.data() + t * d_in;
        for (long k = 0; k < w; ++k) {
            const T* kr = kernel->value.data() + k * d_in * d_out;
            T* o = out.data() + (t * w + k) * d_out;
            for (long i = 0; i < d_in; ++i) {
                T xi = xr[i];
                const T* krow = kr + i * d_out;
                for (long j = 0; j < d_out; ++j) o[j] += xi * krow[j];
            }
        }
    }
    if (!detail::track<T>({x, kernel})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x, kernel}, [x, kernel, w, d_in, d_out, t_in](const Tensor<T>& g) {
        for (long t = 0; t < t_in; ++t) {
            for (long k = 0; k < w; ++k) {
                const T* go = g.data() + (t * w + k) * d_out;
                const T* kr = kernel->value.data() + k * d_in * d_out;
                if (x->requires_grad) {
                    Tensor<T>& gx = x->ensure_grad();
                    T* gxr = gx.data() + t * d_in;
                    for (long i = 0; i < d_in; ++i) {
                        T acc = T(0);
                        const T* krow = kr + i * d_out;
                        for (long j = 0; j < d_out; ++j) acc += go[j] * krow[j];
                        gxr[i] += acc;
                    }
                }
                if (kernel->requires_grad) {
                    Tensor<T>& gk = kernel->ensure_grad();
                    T* gkr = gk.data() + k * d_in * d_out;
                    const T* xr = x->value.data() + t * d_in;
                    for (long i = 0; i < d_in; ++i) {
                        T xi = xr[i];
                        T* gkrow = gkr + i * d_out;
                        for (long j = 0; j < d_out; ++j) gkrow[j] += xi * go[j];
                    }
                }
            }
        }
    });
}

enum class PoolKind { Max, Mean };

// Per-channel temporal pooling. Max routes the gradient to the first maximal
// element of each window.
template <class T>
Var<T> pool1d(const Var<T>& x, PoolKind kind, long window, long stride) {
    long n = x->value.dim(0), d = x->value.dim(1);
    if (window < 1 || stride < 1) throw ConfigError("pool1d: window and stride must be >= 1");
    if (n < window) {
        throw DegenerateInputError("pool1d: input length " + std::to_string(n) + " shorter than window " +
                                   std::to_string(window));
    }
    long t_out = (n - window) / stride + 1;
    Tensor<T> out({t_out, d});
    auto argmax = std::make_shared<std::vector<long>>();
    if (kind == PoolKind::Max) argmax->assign(static_cast<size_t>(t_out * d), 0);
    for (long t = 0; t < t_out; ++t) {
        for (long c = 0; c < d; ++c) {
            if (kind == PoolKind::Mean) {
                T acc = T(0);
                for (long k = 0; k < window; ++k) acc += x->value.at(t * stride + k, c);
                out.at(t, c) = acc / T(window);
            } else {
                long best = t * stride;
                T bv = x->value.at(best, c);
                for (long k = 1; k < window; ++k) {
                    T v = x->value.at(t * stride + k, c);
                    if (v > bv) {
                        bv = v;
                        best = t * stride + k;
                    }
                }
                out.at(t, c) = bv;
                (*argmax)[static_cast<size_t>(t * d + c)] = best;
            }
        }
    }
    if (!detail::track<T>({x})) return constant(std::move(out));
    return detail::make_node<T>(std::move(out), {x}, [x, kind, window, stride, t_out, d, argmax](const Tensor<T>& g) {
        if (!x->requires_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (long t = 0; t < t_out; ++t) {
            for (long c = 0; c < d; ++c) {
                if (kind == PoolKind::Mean) {
                    T share = g.at(t, c) / T(window);
                    for (long k = 0; k < window; ++k) gx.at(t * stride + k, c) += share;
                } else {
                    gx.at((*argmax)[static_cast<size_t>(t * d + c)], c) += g.at(t, c);
                }
            }
        }
    });
}

// Mean negative log-likelihood in nats of targets under row-wise softmax of
// logits. Optionally reports the per-row losses.
template <class T>
Var<T> cross_entropy_mean(const Var<T>& logits, const std::vector<int>& targets, std::vector<T>* per_token = nullptr) {
    long n = logits->value.dim(0), v = logits->value.dim(1);
    if (static_cast<long>(targets.size()) != n) throw DimensionError("cross_entropy: target count mismatch");
    for (int t : targets) {
        if (t < 0 || t >= v) throw DataError("cross_entropy: target id out of range");
    }
    auto probs = std::make_shared<Tensor<T>>(softmax_values(logits->value, 1));
    T total = T(0);
    if (per_token) per_token->resize(static_cast<size_t>(n));
    for (long r = 0; r < n; ++r) {
        // log-softmax evaluated directly for numerical honesty
        T mx = logits->value.at(r, 0);
        for (long c = 1; c < v; ++c) mx = std::max(mx, logits->value.at(r, c));
        T lse = T(0);
        for (long c = 0; c < v; ++c) lse += std::exp(logits->value.at(r, c) - mx);
        T nll = std::log(lse) + mx - logits->value.at(r, targets[static_cast<size_t>(r)]);
        if (per_token) (*per_token)[static_cast<size_t>(r)] = nll;
        total += nll;
    }
    T loss = total / T(n);
    if (!detail::track<T>({logits})) return constant(Tensor<T>::scalar(loss));
    return detail::make_node<T>(Tensor<T>::scalar(loss), {logits}, [logits, probs, targets, n, v](const Tensor<T>& g) {
        if (!logits->requires_grad) return;
        Tensor<T>& gl = logits->ensure_grad();
        T s = g[0] / T(n);
        for (long r = 0; r < n; ++r) {
            for (long c = 0; c < v; ++c) gl.at(r, c) += s * probs->at(r, c);
            gl.at(r, targets[static_cast<size_t>(r)]) -= s;
        }
    });
}

}  // namespace ctrans
