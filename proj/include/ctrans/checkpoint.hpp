#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ctrans/config.hpp"
#include "ctrans/memory.hpp"
#include "ctrans/model.hpp"
#include "ctrans/optim.hpp"

namespace ctrans {

// Versioned binary checkpoints: magic, format version, config echo, named
// parameter blocks in declared order, optimizer streams, memory-state
// snapshots, the step counter, and a whole-file checksum. Everything is
// little-endian with IEEE-754 doubles; save -> load -> save round-trips to
// byte-identical files.

struct CheckpointError : Error {
    using Error::Error;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'c', 't', 'r', 'c', 'k', 'p', 't', '1'};
inline constexpr uint32_t kCkptVersion = 1;

inline uint32_t crc32(const unsigned char* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::string buf;

    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    template <class T>
    void tensor(const Tensor<T>& t) {
        u32(static_cast<uint32_t>(t.rank()));
        for (long k = 0; k < t.rank(); ++k) i64(t.dim(k));
        for (long i = 0; i < t.size(); ++i) f64(static_cast<double>(t[i]));
    }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    int64_t i64() { int64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    std::string str() {
        uint32_t n = u32();
        if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    template <class T>
    Tensor<T> tensor() {
        uint32_t rank = u32();
        if (rank > 4) throw CheckpointError("checkpoint tensor rank " + std::to_string(rank));
        std::vector<long> shape;
        for (uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<long>(i64()));
        Tensor<T> t(shape);
        for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(f64());
        return t;
    }
};

inline void write_model_config(ByteWriter& w, const ModelConfig& m) {
    for (long v : {m.l, m.d, m.heads, m.n_s, m.n_m, m.n_cm, m.c, m.vocab_size, m.mlp_hidden}) w.i64(v);
    w.f64(m.dropout);
    w.u8(static_cast<uint8_t>(m.variant));
    w.u8(static_cast<uint8_t>(m.objective));
}

inline ModelConfig read_model_config(ByteReader& r) {
    ModelConfig m;
    for (long* v : {&m.l, &m.d, &m.heads, &m.n_s, &m.n_m, &m.n_cm, &m.c, &m.vocab_size, &m.mlp_hidden}) {
        *v = static_cast<long>(r.i64());
    }
    m.dropout = r.f64();
    m.variant = static_cast<CompressionVariant>(r.u8());
    m.objective = static_cast<CompressionObjective>(r.u8());
    return m;
}

inline void write_schedule(ByteWriter& w, const TrainSchedule& s) {
    w.f64(s.lr_min);
    w.f64(s.lr_max);
    w.i64(s.warmup_steps);
    w.i64(s.decay_steps);
    w.f64(s.clip_norm);
    w.i64(s.update_every_initial);
    w.i64(s.update_every_late);
    w.i64(s.switch_step);
    w.i64(s.unroll_windows);
}

inline TrainSchedule read_schedule(ByteReader& r) {
    TrainSchedule s;
    s.lr_min = r.f64();
    s.lr_max = r.f64();
    s.warmup_steps = static_cast<long>(r.i64());
    s.decay_steps = static_cast<long>(r.i64());
    s.clip_norm = r.f64();
    s.update_every_initial = static_cast<long>(r.i64());
    s.update_every_late = static_cast<long>(r.i64());
    s.switch_step = static_cast<long>(r.i64());
    s.unroll_windows = static_cast<long>(r.i64());
    return s;
}

template <class T>
void write_memory_state(ByteWriter& w, const MemoryState<T>& st) {
    w.i64(st.n_m);
    w.i64(st.n_cm);
    w.i64(st.d);
    w.i64(st.mem_fill);
    w.i64(st.cm_fill);
    w.u64(st.steps);
    w.u32(static_cast<uint32_t>(st.layers.size()));
    for (const auto& lm : st.layers) {
        w.tensor(lm.m->value);
        w.tensor(lm.cm->value);
        w.u32(static_cast<uint32_t>(lm.usage.size()));
        for (double u : lm.usage) w.f64(u);
    }
}

template <class T>
MemoryState<T> read_memory_state(ByteReader& r) {
    MemoryState<T> st;
    st.n_m = static_cast<long>(r.i64());
    st.n_cm = static_cast<long>(r.i64());
    st.d = static_cast<long>(r.i64());
    st.mem_fill = static_cast<long>(r.i64());
    st.cm_fill = static_cast<long>(r.i64());
    st.steps = r.u64();
    uint32_t layers = r.u32();
    st.layers.resize(layers);
    for (auto& lm : st.layers) {
        lm.m = constant(r.tensor<T>());
        lm.cm = constant(r.tensor<T>());
        uint32_t n = r.u32();
        lm.usage.resize(n);
        for (auto& u : lm.usage) u = r.f64();
    }
    return st;
}

}  // namespace detail

// Optimizer payload carried by a checkpoint; adopt into a freshly built
// OptimizerState over the same parameter list.
template <class T>
struct OptimizerSnapshot {
    long step = 0;
    long micro_steps = 0;
    std::vector<Tensor<T>> m, v, pending;
};

template <class T>
void adopt_optimizer(OptimizerState<T>& opt, OptimizerSnapshot<T>&& snap) {
    if (snap.m.size() != opt.params.size()) {
        throw CheckpointError("optimizer snapshot holds " + std::to_string(snap.m.size()) + " tensors, stream has " +
                              std::to_string(opt.params.size()));
    }
    for (size_t i = 0; i < opt.params.size(); ++i) {
        if (snap.m[i].size() != opt.params[i]->value.size()) {
            throw CheckpointError("optimizer snapshot tensor size mismatch");
        }
    }
    opt.m = std::move(snap.m);
    opt.v = std::move(snap.v);
    opt.pending = std::move(snap.pending);
    opt.step = snap.step;
    opt.micro_steps = snap.micro_steps;
}

template <class T>
struct LoadedCheckpoint {
    ModelConfig model;
    TrainSchedule schedule;
    uint64_t seed = 0;
    uint64_t step = 0;
    ModelParams<T> params;
    std::vector<OptimizerSnapshot<T>> optimizers;  // transformer stream, then compression
    std::vector<MemoryState<T>> states;            // one per batch row
};

template <class T>
std::string encode_checkpoint(const ModelConfig& model, const TrainSchedule& schedule, uint64_t seed, uint64_t step,
                              const ModelParams<T>& params, const std::vector<const OptimizerState<T>*>& optimizers,
                              const std::vector<MemoryState<T>>& states) {
    detail::ByteWriter w;
    w.raw(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    w.u32(detail::kCkptVersion);
    detail::write_model_config(w, model);
    detail::write_schedule(w, schedule);
    w.u64(seed);
    w.u64(step);

    auto named = params.named_params();
    w.u32(static_cast<uint32_t>(named.size()));
    for (const auto& [name, p] : named) {
        w.str(name);
        w.tensor(p->value);
    }

    w.u32(static_cast<uint32_t>(optimizers.size()));
    for (const OptimizerState<T>* opt : optimizers) {
        w.i64(opt->step);
        w.i64(opt->micro_steps);
        w.u32(static_cast<uint32_t>(opt->m.size()));
        for (size_t i = 0; i < opt->m.size(); ++i) {
            w.tensor(opt->m[i]);
            w.tensor(opt->v[i]);
            w.tensor(opt->pending[i]);
        }
    }

    w.u32(static_cast<uint32_t>(states.size()));
    for (const auto& st : states) detail::write_memory_state(w, st);

    uint32_t crc = detail::crc32(reinterpret_cast<const unsigned char*>(w.buf.data()), w.buf.size());
    w.u32(crc);
    return std::move(w.buf);
}

template <class T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof(detail::kCkptMagic) + 8) throw CheckpointError("checkpoint truncated");
    if (std::memcmp(bytes.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    uint32_t actual = detail::crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
    if (stored_crc != actual) throw CheckpointError("checksum mismatch: checkpoint is corrupted");

    detail::ByteReader r(bytes);
    r.pos = sizeof(detail::kCkptMagic);
    uint32_t version = r.u32();
    if (version != detail::kCkptVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(detail::kCkptVersion) + ")");
    }
    LoadedCheckpoint<T> out;
    out.model = detail::read_model_config(r);
    out.schedule = detail::read_schedule(r);
    out.seed = r.u64();
    out.step = r.u64();

    out.params = make_params<T>(out.model, 0);
    auto named = out.params.named_params();
    uint32_t blocks = r.u32();
    if (blocks != named.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(blocks) + " parameter blocks, model needs " +
                              std::to_string(named.size()));
    }
    for (uint32_t b = 0; b < blocks; ++b) {
        std::string name = r.str();
        Tensor<T> val = r.tensor<T>();
        bool found = false;
        for (auto& [n, p] : named) {
            if (n == name) {
                if (!p->value.same_shape(val)) {
                    throw CheckpointError("parameter block '" + name + "' has shape " + val.shape_str() +
                                          ", model expects " + p->value.shape_str());
                }
                p->value = std::move(val);
                found = true;
                break;
            }
        }
        if (!found) throw CheckpointError("unexpected parameter block '" + name + "'");
    }

    uint32_t n_opt = r.u32();
    out.optimizers.resize(n_opt);
    for (auto& snap : out.optimizers) {
        snap.step = static_cast<long>(r.i64());
        snap.micro_steps = static_cast<long>(r.i64());
        uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) {
            snap.m.push_back(r.tensor<T>());
            snap.v.push_back(r.tensor<T>());
            snap.pending.push_back(r.tensor<T>());
        }
    }

    uint32_t n_states = r.u32();
    out.states.resize(n_states);
    for (auto& st : out.states) st = detail::read_memory_state<T>(r);

    if (r.pos != bytes.size() - 4) throw CheckpointError("checkpoint has trailing bytes");
    return out;
}

template <class T>
void save_checkpoint(const std::string& path, const ModelConfig& model, const TrainSchedule& schedule, uint64_t seed,
                     uint64_t step, const ModelParams<T>& params,
                     const std::vector<const OptimizerState<T>*>& optimizers,
                     const std::vector<MemoryState<T>>& states) {
    std::string bytes = encode_checkpoint(model, schedule, seed, step, params, optimizers, states);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write on checkpoint: " + path);
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    return decode_checkpoint<T>(read_text_file(path));
}

}  // namespace ctrans
