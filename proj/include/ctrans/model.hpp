#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctrans/attention.hpp"
#include "ctrans/compression.hpp"
#include "ctrans/memory.hpp"
#include "ctrans/relpos.hpp"

namespace ctrans {

// The full layer stack: embedding, per-layer multi-head attention over
// [compressed memory; memory] plus the current window, post-norm skips, a
// mixing MLP, tied output logits, and the per-window memory bookkeeping with
// its auxiliary compression losses.

struct ModelConfig {
    long l = 2;            // layers
    long d = 64;           // hidden width
    long heads = 4;
    long n_s = 32;         // window length
    long n_m = 32;         // memory slots
    long n_cm = 32;        // compressed-memory slots
    long c = 3;            // compression rate
    long vocab_size = 256;
    long mlp_hidden = 256; // defaults to 4*d via config loader
    double dropout = 0.0;
    CompressionVariant variant = CompressionVariant::Conv;
    CompressionObjective objective = CompressionObjective::AttentionReconstruction;

    long mem_len() const { return n_cm + n_m; }

    void validate() const {
        if (l < 1) throw ConfigError("model: l must be >= 1");
        if (d < 1 || heads < 1 || d % heads != 0) throw ConfigError("model: d must be a positive multiple of heads");
        if (n_s < 1) throw ConfigError("model: n_s must be >= 1");
        if (n_m < 0 || n_cm < 0) throw ConfigError("model: memory sizes must be >= 0");
        if (n_s > n_m) throw ConfigError("model: n_s must not exceed n_m");
        if (c < 1) throw ConfigError("model: c must be >= 1");
        if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
        if (mlp_hidden < 1) throw ConfigError("model: mlp_hidden must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    }
};

template <class T>
struct LayerParams {
    AttentionParams<T> attn;
    Var<T> W1, b1, W2, b2;              // mixing MLP
    Var<T> ln1_g, ln1_b, ln2_g, ln2_b;  // post-attention / post-MLP norms
};

template <class T>
struct ModelParams {
    Var<T> W_emb;  // vocab x d; output projection is its transpose (tied)
    std::vector<LayerParams<T>> layers;
    CompressionSpec<T> compression;

    // Everything the task loss trains.
    std::vector<Var<T>> transformer_params() const {
        std::vector<Var<T>> out{W_emb};
        for (const auto& lp : layers) {
            for (const Var<T>& p : {lp.attn.Wq, lp.attn.Wk, lp.attn.Wv, lp.attn.Wo, lp.attn.Wr, lp.attn.u, lp.attn.v,
                                    lp.W1, lp.b1, lp.W2, lp.b2, lp.ln1_g, lp.ln1_b, lp.ln2_g, lp.ln2_b}) {
                out.push_back(p);
            }
        }
        return out;
    }

    std::vector<Var<T>> compression_params() const { return compression.learnable(); }

    // Declared-order named blocks for serialization.
    std::vector<std::pair<std::string, Var<T>>> named_params() const {
        std::vector<std::pair<std::string, Var<T>>> out;
        out.emplace_back("embedding", W_emb);
        const char* names[] = {"attn_q", "attn_k",  "attn_v",  "attn_out", "attn_rel", "attn_bias_u", "attn_bias_v",
                               "mlp_w1", "mlp_b1",  "mlp_w2",  "mlp_b2",   "norm1_g",  "norm1_b",     "norm2_g",
                               "norm2_b"};
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& lp = layers[i];
            Var<T> ps[] = {lp.attn.Wq, lp.attn.Wk, lp.attn.Wv, lp.attn.Wo, lp.attn.Wr, lp.attn.u, lp.attn.v,
                           lp.W1,      lp.b1,      lp.W2,      lp.b2,      lp.ln1_g,   lp.ln1_b,  lp.ln2_g,
                           lp.ln2_b};
            for (size_t k = 0; k < 15; ++k) {
                out.emplace_back("layer" + std::to_string(i) + "." + names[k], ps[k]);
            }
        }
        const std::pair<const char*, Var<T>> comp[] = {{"comp_conv", compression.conv_kernel},
                                                       {"comp_dil1", compression.dil_kernel1},
                                                       {"comp_dil2", compression.dil_kernel2},
                                                       {"comp_agg", compression.dil_agg},
                                                       {"comp_decoder", compression.decoder_kernel}};
        for (const auto& [name, p] : comp) {
            if (p) out.emplace_back(name, p);
        }
        return out;
    }

    long param_count() const {
        long n = 0;
        for (const auto& [name, p] : named_params()) n += p->value.size();
        return n;
    }
};

namespace detail {

template <class T>
Tensor<T> gaussian(std::vector<long> shape, double stddev, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (long i = 0; i < t.size(); ++i) t[i] = T(dist(rng));
    return t;
}

}  // namespace detail

// All weights N(0, 1/sqrt(fan_in)); biases u, v, b1, b2 start at zero; layer
// norms at identity; compression kernels at their identity/mean presets.
template <class T>
ModelParams<T> make_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams<T> p;
    uint64_t stream = 0;
    auto next_rng = [&] { return make_rng(seed, stream++); };
    double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    double sm = 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden));
    {
        auto rng = next_rng();
        p.W_emb = make_param(detail::gaussian<T>({cfg.vocab_size, cfg.d}, sd, rng));
    }
    p.layers.resize(static_cast<size_t>(cfg.l));
    for (auto& lp : p.layers) {
        for (Var<T>* m : {&lp.attn.Wq, &lp.attn.Wk, &lp.attn.Wv, &lp.attn.Wo, &lp.attn.Wr}) {
            auto rng = next_rng();
            *m = make_param(detail::gaussian<T>({cfg.d, cfg.d}, sd, rng));
        }
        lp.attn.u = make_param(Tensor<T>::zeros({1, cfg.d}));
        lp.attn.v = make_param(Tensor<T>::zeros({1, cfg.d}));
        {
            auto rng = next_rng();
            lp.W1 = make_param(detail::gaussian<T>({cfg.d, cfg.mlp_hidden}, sd, rng));
        }
        lp.b1 = make_param(Tensor<T>::zeros({1, cfg.mlp_hidden}));
        {
            auto rng = next_rng();
            lp.W2 = make_param(detail::gaussian<T>({cfg.mlp_hidden, cfg.d}, sm, rng));
        }
        lp.b2 = make_param(Tensor<T>::zeros({1, cfg.d}));
        lp.ln1_g = make_param(Tensor<T>::full({cfg.d}, T(1)));
        lp.ln1_b = make_param(Tensor<T>::zeros({cfg.d}));
        lp.ln2_g = make_param(Tensor<T>::full({cfg.d}, T(1)));
        lp.ln2_b = make_param(Tensor<T>::zeros({cfg.d}));
    }
    p.compression = make_compression_spec<T>(cfg.variant, cfg.objective, cfg.c, cfg.d);
    return p;
}

template <class T>
MemoryState<T> make_state(const ModelConfig& cfg) {
    return init_state<T>(cfg.l, cfg.n_m, cfg.n_cm, cfg.d);
}

// Relative-position table covering every offset the model can see. Evaluation
// may enlarge the memories, so the table is built for the largest layout.
template <class T>
RelPosEncoding<T> make_relpos_for(const ModelConfig& cfg, long n_m_max = -1, long n_cm_max = -1) {
    long nm = std::max(cfg.n_m, n_m_max);
    long ncm = std::max(cfg.n_cm, n_cm_max);
    return make_relpos<T>(ncm + nm + cfg.n_s, cfg.d);
}

template <class T>
struct ForwardOptions {
    bool train = false;
    bool want_traces = false;
    bool update_memories = true;
    // When set, a model running without an auxiliary objective still reports
    // the attention-reconstruction gap as a per-layer diagnostic (values
    // only, no gradients). Analysis paths use this.
    bool force_compression_diagnostic = false;
    std::mt19937_64* rng = nullptr;  // required when train and dropout > 0
};

template <class T>
struct StepOutput {
    Var<T> logits;     // n x vocab
    Var<T> task_loss;  // scalar, mean nats per token
    std::vector<T> per_token_loss;
    std::vector<Var<T>> aux_losses;  // one per layer when an aux objective ran
    std::vector<AttentionTrace<T>> traces;  // one per layer when requested
};

template <class T>
struct LossSummary {
    Var<T> mean;  // nats per token
    double sum = 0.0;
    std::vector<T> per_token;
};

// Mean and total next-token negative log-likelihood in nats.
template <class T>
LossSummary<T> sequence_loss(const Var<T>& logits, const std::vector<int>& targets) {
    LossSummary<T> out;
    out.mean = cross_entropy_mean(logits, targets, &out.per_token);
    out.sum = 0.0;
    for (T v : out.per_token) out.sum += static_cast<double>(v);
    return out;
}

// One window of the attend-then-update step. tokens/targets have equal length
// n <= n_s; the memory update (eviction, compression, push) requires a full
// window of exactly n_s tokens. Earlier windows influence this one only
// through state.
template <class T>
StepOutput<T> forward(ModelParams<T>& params, const ModelConfig& cfg, MemoryState<T>& state,
                      const std::vector<int>& tokens, const std::vector<int>& targets,
                      const RelPosEncoding<T>& relpos, const ForwardOptions<T>& opts) {
    if (tokens.empty()) throw DegenerateInputError("forward: empty window");
    if (targets.size() != tokens.size()) throw DimensionError("forward: token/target length mismatch");
    long n = static_cast<long>(tokens.size());
    if (n > cfg.n_s) throw DimensionError("forward: window longer than n_s");
    if (opts.update_memories && n != cfg.n_s) {
        throw ContractError("forward: memory update requires a full window of n_s tokens");
    }
    if (state.layers.size() != static_cast<size_t>(cfg.l) || state.d != cfg.d) {
        throw DimensionError("forward: state does not match config");
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) throw DataError("forward: token id out of range");
    }

    std::optional<NoGradGuard> guard;
    if (!opts.train) guard.emplace();

    std::vector<long> ids(tokens.begin(), tokens.end());
    Var<T> h = gather_rows(params.W_emb, ids);
    AttentionLayout layout = make_attention_layout(n, state.mem_len());
    MultiheadOptions<T> mha_opts;
    mha_opts.heads = cfg.heads;
    mha_opts.dropout_rate = opts.train ? cfg.dropout : 0.0;
    mha_opts.rng = opts.rng;

    StepOutput<T> out;
    std::vector<Var<T>> layer_inputs;
    layer_inputs.reserve(static_cast<size_t>(cfg.l));
    std::vector<AttentionTrace<T>> traces(static_cast<size_t>(cfg.l));
    for (long i = 0; i < cfg.l; ++i) {
        auto& lp = params.layers[static_cast<size_t>(i)];
        auto& lm = state.layers[static_cast<size_t>(i)];
        layer_inputs.push_back(h);
        Var<T> mem = state.n_cm > 0 ? concat_rows<T>({lm.cm, lm.m}) : lm.m;
        Var<T> attended = multihead_attention(h, mem, lp.attn, relpos, layout, mha_opts,
                                              &traces[static_cast<size_t>(i)]);
        Var<T> a = layer_norm(add(attended, h), lp.ln1_g, lp.ln1_b);
        Var<T> mid = gelu(add_rowvec(matmul(a, lp.W1), lp.b1));
        Var<T> mlp_out = add_rowvec(matmul(mid, lp.W2), lp.b2);
        if (opts.train && cfg.dropout > 0.0) {
            if (!opts.rng) throw ContractError("forward: dropout requires an rng");
            mlp_out = dropout(mlp_out, cfg.dropout, *opts.rng);
        }
        h = layer_norm(add(mlp_out, a), lp.ln2_g, lp.ln2_b);
    }

    out.logits = matmul_nt(h, params.W_emb);
    LossSummary<T> loss = sequence_loss(out.logits, targets);
    out.task_loss = loss.mean;
    out.per_token_loss = std::move(loss.per_token);
    if (!out.logits->value.all_finite()) throw TrainingFault("forward: non-finite logits");

    if (opts.update_memories) {
        for (long i = 0; i < cfg.l; ++i) accumulate_usage(state, i, traces[static_cast<size_t>(i)]);
        bool aux_mode = cfg.objective != CompressionObjective::Bptt;
        std::vector<Var<T>> aux(static_cast<size_t>(cfg.l));
        auto compress_fn = [&](long layer, const Var<T>& old_mem, const std::vector<double>& old_usage) -> Var<T> {
            if (cfg.objective == CompressionObjective::AttentionReconstruction) {
                Var<T> new_cm;
                aux[static_cast<size_t>(layer)] =
                    attention_reconstruction_loss(layer_inputs[static_cast<size_t>(layer)], old_mem, old_usage,
                                                  params.layers[static_cast<size_t>(layer)].attn, params.compression,
                                                  &new_cm);
                return new_cm;
            }
            return compress(params.compression, old_mem, old_usage);
        };
        MemoryUpdate<T> upd = update_memories(state, layer_inputs, cfg.n_s, compress_fn, /*detach=*/aux_mode);
        if (cfg.objective == CompressionObjective::AutoEncoding && cfg.n_cm > 0) {
            for (long i = 0; i < cfg.l; ++i) {
                aux[static_cast<size_t>(i)] = auto_encoding_loss(upd.old_mem[static_cast<size_t>(i)],
                                                                 upd.new_cm[static_cast<size_t>(i)], params.compression);
            }
        }
        if (aux_mode) {
            for (auto& a : aux) {
                if (!a) a = constant(Tensor<T>::scalar(T(0)));  // n_cm = 0: nothing was compressed
            }
            out.aux_losses = std::move(aux);
        } else if (opts.force_compression_diagnostic && cfg.n_cm > 0) {
            NoGradGuard ng;
            out.aux_losses.resize(static_cast<size_t>(cfg.l));
            for (long i = 0; i < cfg.l; ++i) {
                out.aux_losses[static_cast<size_t>(i)] = attention_reconstruction_loss(
                    layer_inputs[static_cast<size_t>(i)], upd.old_mem[static_cast<size_t>(i)],
                    upd.old_usage[static_cast<size_t>(i)], params.layers[static_cast<size_t>(i)].attn,
                    params.compression);
            }
        }
    }
    if (opts.want_traces) out.traces = std::move(traces);
    return out;
}

}  // namespace ctrans
