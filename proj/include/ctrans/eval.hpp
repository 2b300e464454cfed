#pragma once

#include <string>
#include <vector>

#include "ctrans/metrics.hpp"
#include "ctrans/model.hpp"

namespace ctrans {

// Evaluation protocol: run the model over a token stream in contiguous
// non-overlapping windows with carried state, never touching parameters.
// Memory sizes may be overridden (state is rebuilt zero-initialized at the
// evaluation sizes); per-layer compression losses and attention traces are
// collected as diagnostics on request.

struct EvalOverrides {
    long n_m = -1;   // -1 = training size
    long n_cm = -1;

    void validate() const {
        if (n_m < -1 || n_cm < -1) throw ConfigError("eval overrides must be >= 0 (or -1 for training size)");
    }
};

struct EvalOptions {
    EvalOverrides overrides;
    long max_windows = 0;        // 0 = run the whole stream
    bool want_traces = false;    // collect attention traces for bucket analysis
    bool want_comp_loss = true;  // collect per-layer compression losses
};

template <class T>
struct EvalOutcome {
    double total_loss_nats = 0.0;
    long n_tokens = 0;
    long windows = 0;
    long n_m_used = 0, n_cm_used = 0;
    std::vector<double> per_token_loss;        // aligned to the evaluated tokens
    std::vector<double> per_layer_comp_loss;   // mean over windows, l entries
    std::vector<AttentionTrace<T>> traces;     // all layers and windows, when requested

    double mean_loss() const { return n_tokens > 0 ? total_loss_nats / static_cast<double>(n_tokens) : 0.0; }
};

// Applies overrides to produce the evaluation-time geometry.
inline ModelConfig eval_config(const ModelConfig& train_cfg, const EvalOverrides& ov) {
    ov.validate();
    ModelConfig cfg = train_cfg;
    if (ov.n_m >= 0) cfg.n_m = ov.n_m;
    if (ov.n_cm >= 0) cfg.n_cm = ov.n_cm;
    cfg.validate();
    return cfg;
}

// Sweeps the stream window by window: inputs tokens[t*n_s .. +n_s), targets
// the next-token shift. The final partial window is dropped. The relpos table
// must cover the evaluation geometry (build with make_relpos_for and the
// largest override).
template <class T>
EvalOutcome<T> evaluate(ModelParams<T>& params, const ModelConfig& train_cfg, const std::vector<int>& tokens,
                        const RelPosEncoding<T>& relpos, const EvalOptions& opts) {
    ModelConfig cfg = eval_config(train_cfg, opts.overrides);
    if (static_cast<long>(tokens.size()) < cfg.n_s + 1) {
        throw DegenerateInputError("evaluate: stream of " + std::to_string(tokens.size()) +
                                   " tokens is shorter than one window");
    }
    if (relpos.max_offset() < cfg.mem_len() + cfg.n_s) {
        throw DimensionError("evaluate: relative-position table too small for evaluation memory sizes");
    }
    MemoryState<T> state = make_state<T>(cfg);
    EvalOutcome<T> out;
    out.n_m_used = cfg.n_m;
    out.n_cm_used = cfg.n_cm;
    out.per_layer_comp_loss.assign(static_cast<size_t>(cfg.l), 0.0);

    long windows = (static_cast<long>(tokens.size()) - 1) / cfg.n_s;
    if (opts.max_windows > 0 && windows > opts.max_windows) windows = opts.max_windows;

    ForwardOptions<T> fwd;
    fwd.train = false;
    fwd.update_memories = true;
    fwd.want_traces = opts.want_traces;
    fwd.force_compression_diagnostic = opts.want_comp_loss;

    long comp_windows = 0;
    for (long t = 0; t < windows; ++t) {
        long base = t * cfg.n_s;
        std::vector<int> in(tokens.begin() + base, tokens.begin() + base + cfg.n_s);
        std::vector<int> tg(tokens.begin() + base + 1, tokens.begin() + base + cfg.n_s + 1);
        StepOutput<T> step = forward(params, cfg, state, in, tg, relpos, fwd);
        for (T v : step.per_token_loss) {
            out.per_token_loss.push_back(static_cast<double>(v));
            out.total_loss_nats += static_cast<double>(v);
        }
        out.n_tokens += cfg.n_s;
        if (opts.want_comp_loss && step.aux_losses.size() == static_cast<size_t>(cfg.l)) {
            for (long i = 0; i < cfg.l; ++i) {
                out.per_layer_comp_loss[static_cast<size_t>(i)] += step.aux_losses[static_cast<size_t>(i)]->value[0];
            }
            ++comp_windows;
        }
        if (opts.want_traces) {
            for (auto& tr : step.traces) out.traces.push_back(std::move(tr));
        }
    }
    out.windows = windows;
    if (comp_windows > 0) {
        for (auto& v : out.per_layer_comp_loss) v /= static_cast<double>(comp_windows);
    }
    return out;
}

// CSV renderings for the report files.

template <class T>
std::string eval_metrics_csv(const EvalOutcome<T>& r, long n_chars = 0, long n_words = 0) {
    std::string out = "metric,value\n";
    char line[96];
    auto row = [&](const char* k, double v) {
        std::snprintf(line, sizeof(line), "%s,%.10g\n", k, v);
        out += line;
    };
    row("total_loss_nats", r.total_loss_nats);
    row("n_tokens", static_cast<double>(r.n_tokens));
    row("mean_loss_nats", r.mean_loss());
    row("n_m_eval", static_cast<double>(r.n_m_used));
    row("n_cm_eval", static_cast<double>(r.n_cm_used));
    if (n_chars > 0) row("bpc", bits_per_character(r.total_loss_nats, n_chars));
    if (n_words > 0) row("word_ppl", word_level_perplexity(r.total_loss_nats, n_words));
    return out;
}

template <class T>
std::string per_layer_loss_csv(const EvalOutcome<T>& r) {
    std::string out = "layer,loss\n";
    char line[64];
    for (size_t i = 0; i < r.per_layer_comp_loss.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.10g\n", i, r.per_layer_comp_loss[i]);
        out += line;
    }
    return out;
}

inline std::string bucket_ppl_csv(const std::vector<BucketPerplexity>& buckets) {
    std::string out = "bucket,ppl,count\n";
    char line[96];
    for (const auto& b : buckets) {
        std::snprintf(line, sizeof(line), "%s,%.10g,%ld\n", b.bucket.c_str(), b.ppl, b.word_count);
        out += line;
    }
    return out;
}

}  // namespace ctrans
