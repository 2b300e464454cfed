#pragma once

#include <random>
#include <vector>

#include "ctrans/model.hpp"
#include "ctrans/sampling.hpp"

namespace ctrans {

// Autoregressive nucleus decoding. The prefix is fed through the model in
// full windows so the memories fill exactly as they would during evaluation;
// the tail that does not fill a window stays pending and is re-run (without a
// memory update) to position each next-token distribution. Committing a
// window and reading its final logits row are one forward pass.
template <class T>
std::vector<int> generate(ModelParams<T>& params, const ModelConfig& cfg, const RelPosEncoding<T>& relpos,
                          const std::vector<int>& prefix, long length, double p, std::mt19937_64& rng) {
    if (prefix.empty()) throw DegenerateInputError("generate: prefix must not be empty");
    if (length < 0) throw ConfigError("generate: length must be >= 0");
    if (!(p > 0.0) || p > 1.0) throw ConfigError("nucleus: p must be in (0, 1]");
    for (int t : prefix) {
        if (t < 0 || t >= cfg.vocab_size) throw DataError("generate: prefix token out of range");
    }

    NoGradGuard guard;
    MemoryState<T> state = make_state<T>(cfg);
    ForwardOptions<T> commit;
    commit.train = false;
    commit.update_memories = true;
    ForwardOptions<T> peek = commit;
    peek.update_memories = false;

    auto run = [&](const std::vector<int>& w, const ForwardOptions<T>& o) {
        return forward(params, cfg, state, w, w, relpos, o);  // targets unused beyond validation
    };
    auto last_row = [&](const Var<T>& logits, long row) {
        Tensor<T> out({1, cfg.vocab_size});
        for (long j = 0; j < cfg.vocab_size; ++j) out[j] = logits->value.at(row, j);
        return out;
    };

    std::vector<int> pending;
    for (size_t i = 0; i < prefix.size(); ++i) {
        pending.push_back(prefix[i]);
        if (pending.size() == static_cast<size_t>(cfg.n_s) && i + 1 < prefix.size()) {
            run(pending, commit);
            pending.clear();
        }
    }

    std::vector<int> out;
    out.reserve(static_cast<size_t>(length));
    for (long k = 0; k < length; ++k) {
        Tensor<T> row;
        if (pending.size() == static_cast<size_t>(cfg.n_s)) {
            StepOutput<T> s = run(pending, commit);
            row = last_row(s.logits, cfg.n_s - 1);
            pending.clear();
        } else {
            StepOutput<T> s = run(pending, peek);
            row = last_row(s.logits, static_cast<long>(pending.size()) - 1);
        }
        int next = nucleus_sample_logits(row, p, rng);
        out.push_back(next);
        pending.push_back(next);
    }
    return out;
}

}  // namespace ctrans
