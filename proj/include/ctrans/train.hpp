#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ctrans/checkpoint.hpp"
#include "ctrans/config.hpp"
#include "ctrans/data.hpp"
#include "ctrans/eval.hpp"
#include "ctrans/model.hpp"
#include "ctrans/optim.hpp"

namespace ctrans {

// The training loop: contiguous windows over per-row shards with carried
// memory state (no resets, including across epoch wraps), task gradients into
// the transformer stream, auxiliary gradients into the compression stream,
// accumulation between conditional applies, and periodic checkpoints. With
// unroll_windows = 2 each step backpropagates through two consecutive windows
// of attached state before detaching.

struct StepMetrics {
    long step = 0;
    double lr = 0.0;
    double task_loss_nats = 0.0;
    double aux_loss = 0.0;
    double grad_norm = 0.0;
    double tokens_per_sec = 0.0;
};

inline std::string metrics_csv_header() { return "step,lr,task_loss_nats,aux_loss,grad_norm,tokens_per_sec\n"; }

inline std::string metrics_csv_row(const StepMetrics& m) {
    char line[160];
    std::snprintf(line, sizeof(line), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.step, m.lr, m.task_loss_nats,
                  m.aux_loss, m.grad_norm, m.tokens_per_sec);
    return line;
}

struct TrainResult {
    std::vector<StepMetrics> metrics;  // one row per applied update
    long steps_done = 0;
    double last_task_loss = 0.0;
    double last_aux_loss = 0.0;
};

template <class T>
class Trainer {
  public:
    Trainer(ModelParams<T>& params, const RunConfig& rc, std::vector<int> stream, const RelPosEncoding<T>& relpos)
        : params_(params),
          rc_(rc),
          relpos_(relpos),
          batches_(std::move(stream), rc.batch_size, rc.model.n_s),
          t_opt_(params.transformer_params()),
          c_opt_(params.compression_params()) {
        rc_.validate();
        for (long b = 0; b < rc_.batch_size; ++b) states_.push_back(make_state<T>(rc_.model));
    }

    // Adopts a checkpoint produced by an earlier run of the same config.
    void restore(LoadedCheckpoint<T>&& ck) {
        if (ck.states.size() != states_.size()) {
            throw CheckpointError("checkpoint carries " + std::to_string(ck.states.size()) +
                                  " memory states, run needs " + std::to_string(states_.size()));
        }
        auto named = params_.named_params();
        auto loaded = ck.params.named_params();
        for (size_t i = 0; i < named.size(); ++i) named[i].second->value = std::move(loaded[i].second->value);
        if (ck.optimizers.size() >= 1) adopt_optimizer(t_opt_, std::move(ck.optimizers[0]));
        if (ck.optimizers.size() >= 2 && !c_opt_.params.empty()) adopt_optimizer(c_opt_, std::move(ck.optimizers[1]));
        states_ = std::move(ck.states);
        step_ = static_cast<long>(ck.step);
        window_ = step_ * rc_.schedule.unroll_windows;
    }

    long step() const { return step_; }
    const std::vector<MemoryState<T>>& states() const { return states_; }

    void save(const std::string& path) const { save_at(path, step_); }

    // Runs from the current step up to rc.steps. Returns one metrics row per
    // applied update. On a non-finite fault a diagnostic checkpoint is written
    // before the fault propagates.
    TrainResult run() {
        std::ofstream metrics_file;
        if (!rc_.out_dir.empty()) {
            std::filesystem::create_directories(rc_.out_dir);
            bool fresh = step_ == 0;
            metrics_file.open(rc_.out_dir + "/metrics.csv", fresh ? std::ios::trunc : std::ios::app);
            if (fresh) metrics_file << metrics_csv_header();
        }
        TrainResult result;
        try {
            run_inner(result, metrics_file);
        } catch (const TrainingFault&) {
            if (!rc_.out_dir.empty()) save(rc_.out_dir + "/diagnostic.bin");
            throw;
        }
        if (!rc_.out_dir.empty()) save(rc_.out_dir + "/final.bin");
        result.steps_done = step_;
        return result;
    }

  private:
    void save_at(const std::string& path, long at_step) const {
        std::vector<const OptimizerState<T>*> opts{&t_opt_};
        if (!c_opt_.params.empty()) opts.push_back(&c_opt_);
        save_checkpoint(path, rc_.model, rc_.schedule, rc_.seed, static_cast<uint64_t>(at_step), params_, opts,
                        states_);
    }

    void run_inner(TrainResult& result, std::ofstream& metrics_file) {
        const TrainSchedule& sched = rc_.schedule;
        bool aux_mode = rc_.model.objective != CompressionObjective::Bptt;
        long unroll = sched.unroll_windows;
        long applied_since_ckpt = 0;
        auto clock_start = std::chrono::steady_clock::now();
        long tokens_since = 0;

        for (; step_ < rc_.steps; ++step_) {
            // per-step rng stream keeps dropout draws identical across resumes
            auto rng = make_rng(rc_.seed, 1000, static_cast<uint64_t>(step_));
            ForwardOptions<T> fwd;
            fwd.train = true;
            fwd.update_memories = true;
            fwd.rng = &rng;

            Var<T> task_total;
            Var<T> aux_total;
            double rows = static_cast<double>(rc_.batch_size * unroll);
            for (long u = 0; u < unroll; ++u) {
                Batch batch = batches_.get(window_ % batches_.batch_count());
                ++window_;
                for (long b = 0; b < rc_.batch_size; ++b) {
                    StepOutput<T> out = forward(params_, rc_.model, states_[static_cast<size_t>(b)],
                                                batch.inputs[static_cast<size_t>(b)],
                                                batch.targets[static_cast<size_t>(b)], relpos_, fwd);
                    task_total = task_total ? add(task_total, out.task_loss) : out.task_loss;
                    for (const auto& a : out.aux_losses) aux_total = aux_total ? add(aux_total, a) : a;
                    tokens_since += rc_.model.n_s;
                }
            }
            Var<T> task_mean = scale(task_total, T(1.0 / rows));
            result.last_task_loss = static_cast<double>(task_mean->value[0]);
            backward(task_mean);

            double aux_value = 0.0;
            if (aux_total) {
                Var<T> aux_mean = scale(aux_total, T(1.0 / rows));
                aux_value = static_cast<double>(aux_mean->value[0]);
                if (aux_mode && aux_mean->requires_grad) backward(aux_mean);
            }
            result.last_aux_loss = aux_value;

            t_opt_.collect();
            if (!c_opt_.params.empty()) c_opt_.collect();

            // attached BPTT graphs end at the optimizer-step boundary
            if (!aux_mode) {
                for (auto& st : states_) detach_state(st);
            }

            if (should_apply(step_, sched)) {
                double lr = lr_at(step_, sched);
                double grad_norm = t_opt_.apply(lr, sched.clip_norm, step_);
                if (!c_opt_.params.empty()) c_opt_.apply(lr, sched.clip_norm, step_);

                auto now = std::chrono::steady_clock::now();
                double secs = std::chrono::duration<double>(now - clock_start).count();
                StepMetrics row;
                row.step = step_;
                row.lr = lr;
                row.task_loss_nats = result.last_task_loss;
                row.aux_loss = aux_value;
                row.grad_norm = grad_norm;
                row.tokens_per_sec = secs > 0 ? static_cast<double>(tokens_since) / secs : 0.0;
                result.metrics.push_back(row);
                if (metrics_file.is_open()) metrics_file << metrics_csv_row(row) << std::flush;
                clock_start = now;
                tokens_since = 0;

                if (rc_.checkpoint_every > 0 && !rc_.out_dir.empty()) {
                    if (++applied_since_ckpt >= rc_.checkpoint_every) {
                        // the name records steps completed, so a resumed run
                        // restarts at exactly this boundary
                        save_at(rc_.out_dir + "/ckpt_" + std::to_string(step_ + 1) + ".bin", step_ + 1);
                        applied_since_ckpt = 0;
                    }
                }
            }
        }
    }

    ModelParams<T>& params_;
    RunConfig rc_;
    RelPosEncoding<T> relpos_;
    ContiguousBatches batches_;
    OptimizerState<T> t_opt_, c_opt_;
    std::vector<MemoryState<T>> states_;
    long step_ = 0;
    long window_ = 0;
};

}  // namespace ctrans
