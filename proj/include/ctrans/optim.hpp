#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctrans/autograd.hpp"

namespace ctrans {

// Optimization recipe: Adam under a linear-warmup / cosine-decay learning
// rate, global-norm clipping, and a reduced update frequency after a
// switchpoint with gradient accumulation in between. Transformer and
// compression parameters are stepped by two independent streams that share
// the schedule but never mix gradients.

struct TrainSchedule {
    double lr_min = 1e-6;
    double lr_max = 3e-4;
    long warmup_steps = 500;
    long decay_steps = 20000;
    double clip_norm = 0.1;
    long update_every_initial = 1;
    long update_every_late = 4;
    long switch_step = 5000;
    long unroll_windows = 1;  // 2 = backpropagate through two windows (BPTT mode)

    void validate() const {
        if (lr_min > lr_max) throw ConfigError("schedule: lr_min must be <= lr_max");
        if (warmup_steps < 0 || decay_steps < 1) throw ConfigError("schedule: warmup >= 0, decay >= 1");
        if (update_every_initial < 1 || update_every_late < 1) throw ConfigError("schedule: update frequencies >= 1");
        if (switch_step < 0) throw ConfigError("schedule: switch_step must be >= 0");
        if (unroll_windows < 1 || unroll_windows > 2) throw ConfigError("schedule: unroll_windows must be 1 or 2");
    }
};

// Linear lr_min -> lr_max over warmup_steps, then half-cosine back to lr_min
// over decay_steps, clamped at lr_min afterward. Continuous at the boundary.
inline double lr_at(long step, const TrainSchedule& s) {
    if (step < 0) throw ContractError("lr_at: negative step");
    if (step < s.warmup_steps) {
        return s.lr_min + (s.lr_max - s.lr_min) * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    long t = step - s.warmup_steps;
    if (t >= s.decay_steps) return s.lr_min;
    double cosine = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(s.decay_steps)));
    return s.lr_min + (s.lr_max - s.lr_min) * cosine;
}

// True on every step before switch_step, then once every update_every_late
// steps. Gradients keep accumulating between applications.
inline bool should_apply(long step, const TrainSchedule& s) {
    if (step < 0) throw ContractError("should_apply: negative step");
    if (step < s.switch_step) return (step % s.update_every_initial) == 0;
    return ((step - s.switch_step) % s.update_every_late) == 0;
}

// Scales the gradient set so its global L2 norm is at most max_norm. Returns
// the pre-clip norm. Non-finite gradients abort with the offending step.
template <class T>
double clip_global_norm(std::vector<Tensor<T>*> grads, double max_norm, long step = -1) {
    double sumsq = 0.0;
    for (const Tensor<T>* g : grads) {
        for (long i = 0; i < g->size(); ++i) {
            double v = static_cast<double>((*g)[i]);
            if (!std::isfinite(v)) {
                throw TrainingFault("non-finite gradient" + (step >= 0 ? " at step " + std::to_string(step) : ""));
            }
            sumsq += v * v;
        }
    }
    double norm = std::sqrt(sumsq);
    if (norm > max_norm && norm > 0.0) {
        T scale = T(max_norm / norm);
        for (Tensor<T>* g : grads) {
            for (long i = 0; i < g->size(); ++i) (*g)[i] *= scale;
        }
    }
    return norm;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One stream of Adam state over a fixed parameter list. Gradients accumulate
// into pending buffers across micro-steps; apply() averages them, clips, and
// takes one bias-corrected Adam step.
template <class T>
struct OptimizerState {
    std::vector<Var<T>> params;
    std::vector<Tensor<T>> m, v;       // first/second moments
    std::vector<Tensor<T>> pending;    // accumulated gradients awaiting an update
    long micro_steps = 0;              // backward passes accumulated into pending
    long step = 0;                     // applied Adam updates (bias-correction counter)
    AdamConfig adam;

    explicit OptimizerState(std::vector<Var<T>> ps = {}) : params(std::move(ps)) { reset_buffers(); }

    void reset_buffers() {
        m.clear();
        v.clear();
        pending.clear();
        for (const auto& p : params) {
            m.push_back(Tensor<T>::zeros(p->value.shape()));
            v.push_back(Tensor<T>::zeros(p->value.shape()));
            pending.push_back(Tensor<T>::zeros(p->value.shape()));
        }
        micro_steps = 0;
        step = 0;
    }

    // Moves the gradients a backward pass left on the parameters into the
    // pending accumulator and clears the parameter grads.
    void collect() {
        for (size_t i = 0; i < params.size(); ++i) {
            Var<T>& p = params[i];
            if (p->grad.size() == p->value.size()) {
                axpy(pending[i], p->grad);
                p->zero_grad();
            }
        }
        ++micro_steps;
    }

    // Averages the pending gradients over the accumulated micro-steps, clips
    // to clip_norm, and applies one Adam step at the given rate. Returns the
    // post-averaging pre-clip gradient norm.
    double apply(double lr, double clip_norm, long at_step = -1) {
        if (micro_steps == 0) throw ContractError("optimizer apply() with no collected gradients");
        T inv = T(1) / T(micro_steps);
        std::vector<Tensor<T>*> grad_ptrs;
        grad_ptrs.reserve(pending.size());
        for (auto& g : pending) {
            for (long i = 0; i < g.size(); ++i) g[i] *= inv;
            grad_ptrs.push_back(&g);
        }
        double norm = clip_global_norm(grad_ptrs, clip_norm, at_step);
        ++step;
        double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(step));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& g = pending[i];
            Tensor<T>& mi = m[i];
            Tensor<T>& vi = v[i];
            Tensor<T>& w = params[i]->value;
            for (long j = 0; j < g.size(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = adam.beta1 * static_cast<double>(mi[j]) + (1.0 - adam.beta1) * gj;
                double vj = adam.beta2 * static_cast<double>(vi[j]) + (1.0 - adam.beta2) * gj * gj;
                mi[j] = T(mj);
                vi[j] = T(vj);
                double mhat = mj / bc1;
                double vhat = vj / bc2;
                w[j] = T(static_cast<double>(w[j]) - lr * mhat / (std::sqrt(vhat) + adam.eps));
            }
            g.fill(T(0));
        }
        micro_steps = 0;
        return norm;
    }
};

}  // namespace ctrans
