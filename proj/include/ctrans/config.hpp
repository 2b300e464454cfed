#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctrans/compression.hpp"
#include "ctrans/data.hpp"
#include "ctrans/model.hpp"
#include "ctrans/optim.hpp"

namespace ctrans {

// Run configuration: sectioned key = value text. Lines starting with # or ;
// are comments. Every key must be known; typos are rejected by name rather
// than silently ignored.

struct DataConfig {
    std::string source = "file";  // "file" or "synthetic"
    TokenKind kind = TokenKind::Char;
    std::string train_path, valid_path, test_path;
    SyntheticTaskSpec synthetic;
};

struct RunConfig {
    ModelConfig model;
    TrainSchedule schedule;
    DataConfig data;
    long batch_size = 1;
    long steps = 100;
    long checkpoint_every = 0;  // applied updates between checkpoints; 0 = final only
    long eval_windows = 0;      // evaluation window cap, 0 = whole split
    uint64_t seed = 1;
    std::string out_dir = "out";

    void validate() const {
        model.validate();
        schedule.validate();
        if (batch_size < 1) throw ConfigError("[train] batch_size must be >= 1");
        if (steps < 1) throw ConfigError("[train] steps must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("[train] checkpoint_every must be >= 0");
        if (eval_windows < 0) throw ConfigError("[eval] windows must be >= 0");
        if (data.source != "file" && data.source != "synthetic") {
            throw ConfigError("[data] source must be 'file' or 'synthetic'");
        }
        if (data.source == "synthetic") data.synthetic.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct IniEntry {
    std::string section, key, value;
    long line = 0;
};

inline std::vector<IniEntry> parse_ini(const std::string& text) {
    std::vector<IniEntry> entries;
    std::istringstream in(text);
    std::string raw, section;
    long line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        // inline comments start at a marker preceded by whitespace, so values
        // may still contain bare '#' or ';'
        for (size_t i = 1; i < line.size(); ++i) {
            if ((line[i] == '#' || line[i] == ';') && std::isspace(static_cast<unsigned char>(line[i - 1]))) {
                line = trim(line.substr(0, i));
                break;
            }
        }
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        IniEntry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = line_no;
        if (e.key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline long to_long(const IniEntry& e) {
    try {
        size_t pos = 0;
        long v = std::stol(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(e.line) + ": '" + e.key + "' needs an integer, got '" +
                          e.value + "'");
    }
}

inline double to_double(const IniEntry& e) {
    try {
        size_t pos = 0;
        double v = std::stod(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(e.line) + ": '" + e.key + "' needs a number, got '" +
                          e.value + "'");
    }
}

}  // namespace detail

// Parses configuration text into a RunConfig. Unknown sections or keys are
// errors naming the offender. mlp_hidden defaults to 4*d when not given.
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    bool mlp_set = false;
    for (const detail::IniEntry& e : detail::parse_ini(text)) {
        auto unknown = [&]() -> ConfigError {
            return ConfigError("config line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" +
                               e.section + "]");
        };
        if (e.section == "model") {
            if (e.key == "l") rc.model.l = detail::to_long(e);
            else if (e.key == "d") rc.model.d = detail::to_long(e);
            else if (e.key == "heads") rc.model.heads = detail::to_long(e);
            else if (e.key == "n_s") rc.model.n_s = detail::to_long(e);
            else if (e.key == "n_m") rc.model.n_m = detail::to_long(e);
            else if (e.key == "n_cm") rc.model.n_cm = detail::to_long(e);
            else if (e.key == "c") rc.model.c = detail::to_long(e);
            else if (e.key == "vocab_size") rc.model.vocab_size = detail::to_long(e);
            else if (e.key == "mlp_hidden") { rc.model.mlp_hidden = detail::to_long(e); mlp_set = true; }
            else if (e.key == "dropout") rc.model.dropout = detail::to_double(e);
            else if (e.key == "compression") rc.model.variant = variant_from_name(e.value);
            else if (e.key == "objective") rc.model.objective = objective_from_name(e.value);
            else throw unknown();
        } else if (e.section == "train") {
            if (e.key == "lr_min") rc.schedule.lr_min = detail::to_double(e);
            else if (e.key == "lr_max") rc.schedule.lr_max = detail::to_double(e);
            else if (e.key == "warmup_steps") rc.schedule.warmup_steps = detail::to_long(e);
            else if (e.key == "decay_steps") rc.schedule.decay_steps = detail::to_long(e);
            else if (e.key == "clip_norm") rc.schedule.clip_norm = detail::to_double(e);
            else if (e.key == "update_every_initial") rc.schedule.update_every_initial = detail::to_long(e);
            else if (e.key == "update_every_late") rc.schedule.update_every_late = detail::to_long(e);
            else if (e.key == "switch_step") rc.schedule.switch_step = detail::to_long(e);
            else if (e.key == "unroll_windows") rc.schedule.unroll_windows = detail::to_long(e);
            else if (e.key == "batch_size") rc.batch_size = detail::to_long(e);
            else if (e.key == "steps") rc.steps = detail::to_long(e);
            else if (e.key == "checkpoint_every") rc.checkpoint_every = detail::to_long(e);
            else throw unknown();
        } else if (e.section == "data") {
            if (e.key == "source") rc.data.source = e.value;
            else if (e.key == "kind") {
                if (e.value == "char") rc.data.kind = TokenKind::Char;
                else if (e.value == "word") rc.data.kind = TokenKind::Word;
                else throw ConfigError("config line " + std::to_string(e.line) + ": kind must be char or word");
            }
            else if (e.key == "train") rc.data.train_path = e.value;
            else if (e.key == "valid") rc.data.valid_path = e.value;
            else if (e.key == "test") rc.data.test_path = e.value;
            else throw unknown();
        } else if (e.section == "synthetic") {
            if (e.key == "vocab_size") rc.data.synthetic.vocab_size = detail::to_long(e);
            else if (e.key == "distance") rc.data.synthetic.distance = detail::to_long(e);
            else if (e.key == "episode_len") rc.data.synthetic.episode_len = detail::to_long(e);
            else if (e.key == "episodes") rc.data.synthetic.episodes = detail::to_long(e);
            else throw unknown();
        } else if (e.section == "eval") {
            if (e.key == "windows") rc.eval_windows = detail::to_long(e);
            else throw unknown();
        } else if (e.section == "run") {
            if (e.key == "seed") rc.seed = static_cast<uint64_t>(detail::to_long(e));
            else if (e.key == "out") rc.out_dir = e.value;
            else throw unknown();
        } else {
            throw ConfigError("config line " + std::to_string(e.line) + ": unknown section [" + e.section + "]");
        }
    }
    if (!mlp_set) rc.model.mlp_hidden = 4 * rc.model.d;
    if (rc.data.source == "synthetic") {
        rc.model.vocab_size = rc.data.synthetic.vocab_size;
    }
    rc.validate();
    return rc;
}

namespace detail {

// shortest decimal form that parses back to the same double
inline std::string fmt_double(double x) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

}  // namespace detail

// Renders the fully resolved configuration as a config file that parses back
// to the identical RunConfig. Train tooling echoes this before running.
inline std::string render_run_config(const RunConfig& rc) {
    std::ostringstream o;
    o << "[model]\n";
    o << "l = " << rc.model.l << "\n";
    o << "d = " << rc.model.d << "\n";
    o << "heads = " << rc.model.heads << "\n";
    o << "n_s = " << rc.model.n_s << "\n";
    o << "n_m = " << rc.model.n_m << "\n";
    o << "n_cm = " << rc.model.n_cm << "\n";
    o << "c = " << rc.model.c << "\n";
    o << "vocab_size = " << rc.model.vocab_size << "\n";
    o << "mlp_hidden = " << rc.model.mlp_hidden << "\n";
    o << "dropout = " << detail::fmt_double(rc.model.dropout) << "\n";
    o << "compression = " << variant_name(rc.model.variant) << "\n";
    o << "objective = " << objective_name(rc.model.objective) << "\n";
    o << "\n[train]\n";
    o << "lr_min = " << detail::fmt_double(rc.schedule.lr_min) << "\n";
    o << "lr_max = " << detail::fmt_double(rc.schedule.lr_max) << "\n";
    o << "warmup_steps = " << rc.schedule.warmup_steps << "\n";
    o << "decay_steps = " << rc.schedule.decay_steps << "\n";
    o << "clip_norm = " << detail::fmt_double(rc.schedule.clip_norm) << "\n";
    o << "update_every_initial = " << rc.schedule.update_every_initial << "\n";
    o << "update_every_late = " << rc.schedule.update_every_late << "\n";
    o << "switch_step = " << rc.schedule.switch_step << "\n";
    o << "unroll_windows = " << rc.schedule.unroll_windows << "\n";
    o << "batch_size = " << rc.batch_size << "\n";
    o << "steps = " << rc.steps << "\n";
    o << "checkpoint_every = " << rc.checkpoint_every << "\n";
    o << "\n[data]\n";
    o << "source = " << rc.data.source << "\n";
    o << "kind = " << (rc.data.kind == TokenKind::Char ? "char" : "word") << "\n";
    if (!rc.data.train_path.empty()) o << "train = " << rc.data.train_path << "\n";
    if (!rc.data.valid_path.empty()) o << "valid = " << rc.data.valid_path << "\n";
    if (!rc.data.test_path.empty()) o << "test = " << rc.data.test_path << "\n";
    if (rc.data.source == "synthetic") {
        o << "\n[synthetic]\n";
        o << "vocab_size = " << rc.data.synthetic.vocab_size << "\n";
        o << "distance = " << rc.data.synthetic.distance << "\n";
        o << "episode_len = " << rc.data.synthetic.episode_len << "\n";
        o << "episodes = " << rc.data.synthetic.episodes << "\n";
    }
    o << "\n[eval]\n";
    o << "windows = " << rc.eval_windows << "\n";
    o << "\n[run]\n";
    o << "seed = " << rc.seed << "\n";
    o << "out = " << rc.out_dir << "\n";
    return o.str();
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

}  // namespace ctrans
