#pragma once

// List-based memory simulator: applies the dual-FIFO update literally with
// row lists and explicit erase/append, no tensors, no shared bookkeeping
// code. The compression callback receives the evicted rows and returns the
// compressed rows.

#include <functional>
#include <vector>

namespace testsupport {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

struct ListMemorySim {
    std::vector<Rows> m, cm;  // per layer
    long n_m = 0, n_cm = 0, d = 0;

    ListMemorySim(long l, long n_m_, long n_cm_, long d_) : n_m(n_m_), n_cm(n_cm_), d(d_) {
        m.assign(static_cast<size_t>(l), Rows(static_cast<size_t>(n_m), Row(static_cast<size_t>(d), 0.0)));
        cm.assign(static_cast<size_t>(l), Rows(static_cast<size_t>(n_cm), Row(static_cast<size_t>(d), 0.0)));
    }

    struct StepResult {
        std::vector<Rows> old_mem;  // per layer
        std::vector<Rows> new_cm;   // per layer
    };

    // h_per_layer[i] holds the n_s pushed rows for layer i.
    StepResult step(const std::vector<Rows>& h_per_layer,
                    const std::function<Rows(long layer, const Rows& old_rows)>& compress) {
        StepResult res;
        for (size_t i = 0; i < m.size(); ++i) {
            long n_s = static_cast<long>(h_per_layer[i].size());
            Rows old_rows(m[i].begin(), m[i].begin() + n_s);
            Rows compressed = n_cm > 0 ? compress(static_cast<long>(i), old_rows) : Rows{};
            // m <- concat(m, h)[-n_m:]
            Rows grown = m[i];
            grown.insert(grown.end(), h_per_layer[i].begin(), h_per_layer[i].end());
            m[i] = Rows(grown.end() - n_m, grown.end());
            // cm <- concat(cm, new_cm)[-n_cm:]
            Rows grown_cm = cm[i];
            grown_cm.insert(grown_cm.end(), compressed.begin(), compressed.end());
            if (n_cm > 0) {
                cm[i] = Rows(grown_cm.end() - n_cm, grown_cm.end());
            }
            res.old_mem.push_back(std::move(old_rows));
            res.new_cm.push_back(std::move(compressed));
        }
        return res;
    }
};

}  // namespace testsupport
