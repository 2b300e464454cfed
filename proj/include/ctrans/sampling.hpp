#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "ctrans/common.hpp"
#include "ctrans/tensor.hpp"

namespace ctrans {

// Nucleus (top-p) sampling at temperature 1: restrict to the smallest
// probability-sorted candidate set whose cumulative mass reaches p
// (inclusive of the crossing element), renormalize, and draw.

// Candidate token ids, ordered by probability descending with index-ascending
// tie-break. p in (0, 1]; as p -> 0 the set shrinks to the argmax, p = 1
// keeps the full support.
template <class T>
std::vector<int> nucleus_candidates(const Tensor<T>& probs, double p) {
    if (!(p > 0.0) || p > 1.0) throw ConfigError("nucleus: p must be in (0, 1]");
    long n = probs.size();
    if (n == 0) throw DegenerateInputError("nucleus: empty distribution");
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });
    std::vector<int> out;
    double cum = 0.0;
    for (int id : order) {
        out.push_back(id);
        cum += static_cast<double>(probs[id]);
        if (cum >= p) break;
    }
    return out;
}

template <class T>
int nucleus_sample(const Tensor<T>& probs, double p, std::mt19937_64& rng) {
    std::vector<int> cand = nucleus_candidates(probs, p);
    double mass = 0.0;
    for (int id : cand) mass += static_cast<double>(probs[id]);
    if (mass <= 0.0) throw DegenerateInputError("nucleus: zero candidate mass");
    std::uniform_real_distribution<double> unif(0.0, mass);
    double draw = unif(rng);
    double cum = 0.0;
    for (int id : cand) {
        cum += static_cast<double>(probs[id]);
        if (draw < cum) return id;
    }
    return cand.back();
}

template <class T>
int nucleus_sample_logits(const Tensor<T>& logits, double p, std::mt19937_64& rng) {
    return nucleus_sample(softmax_values(logits, 1), p, rng);
}

}  // namespace ctrans
