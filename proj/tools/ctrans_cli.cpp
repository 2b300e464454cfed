// ctrans: train, evaluate, analyze, sample and size-planning entry points.
//
// Exit codes: 0 success, 1 user error (config, data, checkpoint), 2 runtime
// fault (divergence, internal contract violations). The CTRANS_OUT
// environment variable, when set, roots every relative output directory.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrans/checkpoint.hpp"
#include "ctrans/config.hpp"
#include "ctrans/data.hpp"
#include "ctrans/eval.hpp"
#include "ctrans/generate.hpp"
#include "ctrans/metrics.hpp"
#include "ctrans/train.hpp"

using namespace ctrans;
using T = double;

namespace {

std::string resolve_out(const std::string& dir) {
    if (dir.empty()) return dir;
    const char* root = std::getenv("CTRANS_OUT");
    if (root && *root && !std::filesystem::path(dir).is_absolute()) {
        return (std::filesystem::path(root) / dir).string();
    }
    return dir;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write: " + path);
    out << body;
}

struct CorpusBundle {
    std::vector<int> train, valid, test;
    TokenKind kind = TokenKind::Char;
    Vocabulary vocab;
    std::vector<std::string> valid_surfaces, test_surfaces;  // word runs only
};

// Assembles token streams for a run. Word corpora build their vocabulary from
// the training split; validation/test reuse it (unknowns map to <unk>).
CorpusBundle load_corpus(RunConfig& rc) {
    CorpusBundle cb;
    if (rc.data.source == "synthetic") {
        SyntheticTaskSpec spec = rc.data.synthetic;
        spec.seed = rc.seed;
        cb.train = synthetic_recall(spec).tokens;
        SyntheticTaskSpec held = spec;
        held.seed = rc.seed + 1;
        held.episodes = std::max<long>(1, spec.episodes / 8);
        cb.valid = synthetic_recall(held).tokens;
        held.seed = rc.seed + 2;
        cb.test = synthetic_recall(held).tokens;
        return cb;
    }
    if (rc.data.train_path.empty()) throw ConfigError("[data] train: missing corpus path");
    cb.kind = rc.data.kind;
    std::string text = read_text_file(rc.data.train_path);
    cb.vocab = cb.kind == TokenKind::Char ? char_vocabulary() : build_vocabulary(text, cb.kind);
    cb.train = tokenize_with(cb.vocab, text).ids;
    if (!rc.data.valid_path.empty()) {
        TokenStream s = tokenize_with(cb.vocab, read_text_file(rc.data.valid_path));
        cb.valid = s.ids;
        cb.valid_surfaces = s.surfaces;
    }
    if (!rc.data.test_path.empty()) {
        TokenStream s = tokenize_with(cb.vocab, read_text_file(rc.data.test_path));
        cb.test = s.ids;
        cb.test_surfaces = s.surfaces;
    }
    if (cb.kind == TokenKind::Word) rc.model.vocab_size = static_cast<long>(cb.vocab.id_to_surface.size());
    return cb;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed, const std::string& out_override,
              const std::string& resume_path) {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.seed = *seed;
    if (!out_override.empty()) rc.out_dir = out_override;
    rc.out_dir = resolve_out(rc.out_dir);

    CorpusBundle cb = load_corpus(rc);
    rc.validate();

    std::string echo = render_run_config(rc);
    std::cout << echo;
    if (!rc.out_dir.empty()) {
        std::filesystem::create_directories(rc.out_dir);
        write_file(rc.out_dir + "/config.ini", echo);
    }

    ModelParams<T> params = make_params<T>(rc.model, rc.seed);
    auto relpos = make_relpos_for<T>(rc.model);
    Trainer<T> trainer(params, rc, cb.train, relpos);
    if (!resume_path.empty()) trainer.restore(load_checkpoint<T>(resume_path));

    TrainResult result = trainer.run();
    std::cout << "trained " << result.steps_done << " steps, " << result.metrics.size()
              << " applied updates, final task loss " << result.last_task_loss << " nats\n";
    return 0;
}

// One report row per requested memory size.
struct SweepRow {
    long n_m, n_cm;
    EvalOutcome<T> outcome;
};

std::vector<SweepRow> run_sweep(ModelParams<T>& params, const ModelConfig& model, const std::vector<int>& stream,
                                std::vector<long> nm_list, std::vector<long> ncm_list, long windows,
                                bool want_traces) {
    if (nm_list.empty()) nm_list.push_back(-1);
    if (ncm_list.empty()) ncm_list.push_back(-1);
    long nm_max = model.n_m, ncm_max = model.n_cm;
    for (long v : nm_list) nm_max = std::max(nm_max, v);
    for (long v : ncm_list) ncm_max = std::max(ncm_max, v);
    auto relpos = make_relpos_for<T>(model, nm_max, ncm_max);

    std::vector<SweepRow> rows;
    for (long nm : nm_list) {
        for (long ncm : ncm_list) {
            EvalOptions opts;
            opts.overrides.n_m = nm;
            opts.overrides.n_cm = ncm;
            opts.max_windows = windows;
            opts.want_traces = want_traces;
            SweepRow row;
            row.outcome = evaluate(params, model, stream, relpos, opts);
            row.n_m = row.outcome.n_m_used;
            row.n_cm = row.outcome.n_cm_used;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// Chooses the eval stream: explicit --data file (byte tokens) or a config's
// chosen split.
CorpusBundle eval_corpus(const std::string& data_path, const std::string& config_path, const std::string& split,
                         RunConfig& rc_out) {
    if (!data_path.empty()) {
        CorpusBundle cb;
        cb.vocab = char_vocabulary();
        cb.valid = tokenize_with(cb.vocab, read_text_file(data_path)).ids;
        return cb;
    }
    if (config_path.empty()) throw ConfigError("eval needs --data or --config to locate a corpus");
    rc_out = load_run_config(config_path);
    CorpusBundle cb = load_corpus(rc_out);
    if (split == "train") {
        cb.valid = cb.train;
        cb.valid_surfaces.clear();
    } else if (split == "test") {
        cb.valid = cb.test;
        cb.valid_surfaces = cb.test_surfaces;
    } else if (split != "valid") {
        throw ConfigError("unknown split '" + split + "' (train, valid or test)");
    }
    if (cb.valid.empty()) throw ConfigError("[data] " + split + ": missing corpus path");
    return cb;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& config_path,
             const std::string& split, std::vector<long> nm_list, std::vector<long> ncm_list, long windows,
             const std::string& out_dir) {
    LoadedCheckpoint<T> ck = load_checkpoint<T>(ckpt_path);
    RunConfig rc;
    CorpusBundle cb = eval_corpus(data_path, config_path, split, rc);

    std::vector<SweepRow> rows =
        run_sweep(ck.params, ck.model, cb.valid, std::move(nm_list), std::move(ncm_list), windows, false);

    std::string report = "n_m,n_cm,windows,tokens,mean_loss_nats,bpc,word_ppl\n";
    for (const SweepRow& r : rows) {
        char line[200];
        std::string bpc, wppl;
        if (cb.kind == TokenKind::Char) {
            bpc = std::to_string(bits_per_character(r.outcome.total_loss_nats, r.outcome.n_tokens));
        } else if (!cb.valid_surfaces.empty()) {
            wppl = std::to_string(word_level_perplexity(r.outcome.total_loss_nats, r.outcome.n_tokens));
        }
        std::snprintf(line, sizeof(line), "%ld,%ld,%ld,%ld,%.10g,%s,%s\n", r.n_m, r.n_cm, r.outcome.windows,
                      r.outcome.n_tokens, r.outcome.mean_loss(), bpc.c_str(), wppl.c_str());
        report += line;
    }
    std::cout << report;

    std::string out = resolve_out(out_dir);
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_file(out + "/eval_report.csv", report);
        for (const SweepRow& r : rows) {
            std::string tag = std::to_string(r.n_m) + "_" + std::to_string(r.n_cm);
            write_file(out + "/eval_metrics_" + tag + ".csv", eval_metrics_csv(r.outcome));
            write_file(out + "/comp_loss_" + tag + ".csv", per_layer_loss_csv(r.outcome));
        }
    }
    return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& data_path, const std::string& config_path,
                const std::string& split, long windows, const std::string& out_dir) {
    LoadedCheckpoint<T> ck = load_checkpoint<T>(ckpt_path);
    RunConfig rc;
    CorpusBundle cb = eval_corpus(data_path, config_path, split, rc);

    auto relpos = make_relpos_for<T>(ck.model);
    EvalOptions opts;
    opts.max_windows = windows;
    opts.want_traces = true;
    EvalOutcome<T> outcome = evaluate(ck.params, ck.model, cb.valid, relpos, opts);

    std::vector<BucketStat> stats = attention_buckets(outcome.traces, ck.model.n_cm, ck.model.n_m, ck.model.n_s);
    std::string buckets = bucket_csv(stats);
    std::string layers = per_layer_loss_csv(outcome);
    std::cout << buckets << layers;

    std::string out = resolve_out(out_dir);
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_file(out + "/attention_buckets.csv", buckets);
        write_file(out + "/comp_loss_by_layer.csv", layers);
    }
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& prefix, const std::string& ids_csv, long length,
               double p, uint64_t seed) {
    LoadedCheckpoint<T> ck = load_checkpoint<T>(ckpt_path);

    std::vector<int> prefix_ids;
    bool byte_mode = ids_csv.empty();
    if (byte_mode) {
        for (unsigned char ch : prefix) prefix_ids.push_back(static_cast<int>(ch));
    } else {
        std::istringstream in(ids_csv);
        std::string tok;
        while (std::getline(in, tok, ',')) prefix_ids.push_back(std::stoi(tok));
    }

    auto relpos = make_relpos_for<T>(ck.model);
    auto rng = make_rng(seed, 7);
    std::vector<int> out = generate(ck.params, ck.model, relpos, prefix_ids, length, p, rng);

    if (byte_mode) {
        std::cout << prefix;
        for (int t : out) std::cout << static_cast<char>(static_cast<unsigned char>(t));
        std::cout << "\n";
    } else {
        for (size_t i = 0; i < prefix_ids.size(); ++i) std::cout << (i ? "," : "") << prefix_ids[i];
        for (int t : out) std::cout << "," << t;
        std::cout << "\n";
    }
    return 0;
}

int cmd_range(long l, long n_m, long n_cm, long c, long n_s) {
    RangeReport comp = range_report(l, n_s, n_m, n_cm, c);
    RangeReport txl = range_report(l, n_s, n_m + n_cm, 0, c);  // same attention cost, no compression
    std::cout << "config,l,n_s,n_m,n_cm,c,max_temporal_range,attention_cost\n";
    std::cout << "compressive," << l << "," << n_s << "," << n_m << "," << n_cm << "," << c << ","
              << comp.max_temporal_range << "," << comp.attention_cost << "\n";
    std::cout << "txl_equivalent," << l << "," << n_s << "," << (n_m + n_cm) << ",0," << c << ","
              << txl.max_temporal_range << "," << txl.attention_cost << "\n";
    double ratio = txl.max_temporal_range > 0
                       ? static_cast<double>(comp.max_temporal_range) / static_cast<double>(txl.max_temporal_range)
                       : 0.0;
    char line[64];
    std::snprintf(line, sizeof(line), "range_ratio,%.10g\n", ratio);
    std::cout << line;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compressive-memory transformer toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string tr_config, tr_out, tr_resume;
    std::optional<uint64_t> tr_seed;
    train->add_option("--config", tr_config, "run configuration file")->required();
    train->add_option("--seed", tr_seed, "override the config seed");
    train->add_option("--out", tr_out, "override the output directory");
    train->add_option("--resume", tr_resume, "checkpoint to continue from");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    std::string ev_ckpt, ev_data, ev_config, ev_split = "valid", ev_out;
    std::vector<long> ev_nm, ev_ncm;
    long ev_windows = 0;
    eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    eval->add_option("--data", ev_data, "corpus file (byte tokens)");
    eval->add_option("--config", ev_config, "config file locating the corpus");
    eval->add_option("--split", ev_split, "which config split to use (train, valid, test)");
    eval->add_option("--n-m-eval", ev_nm, "memory sizes to sweep");
    eval->add_option("--n-cm-eval", ev_ncm, "compressed-memory sizes to sweep");
    eval->add_option("--windows", ev_windows, "cap evaluated windows (0 = all)");
    eval->add_option("--out", ev_out, "directory for report files");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "attention-usage and compression-loss breakdown");
    std::string an_ckpt, an_data, an_config, an_split = "valid", an_out;
    long an_windows = 16;
    analyze->add_option("--checkpoint", an_ckpt, "checkpoint file")->required();
    analyze->add_option("--data", an_data, "corpus file (byte tokens)");
    analyze->add_option("--config", an_config, "config file locating the corpus");
    analyze->add_option("--split", an_split, "which config split to use");
    analyze->add_option("--windows", an_windows, "windows to trace");
    analyze->add_option("--out", an_out, "directory for report files");

    // sample
    auto* sample = app.add_subcommand("sample", "nucleus-sample a continuation");
    std::string sm_ckpt, sm_prefix, sm_ids;
    long sm_length = 64;
    double sm_p = 0.98;
    uint64_t sm_seed = 1;
    sample->add_option("--checkpoint", sm_ckpt, "checkpoint file")->required();
    sample->add_option("--prefix", sm_prefix, "prefix text (byte tokens)");
    sample->add_option("--ids", sm_ids, "prefix as comma-separated token ids");
    sample->add_option("--length", sm_length, "tokens to generate");
    sample->add_option("--p", sm_p, "nucleus probability mass");
    sample->add_option("--seed", sm_seed, "sampling seed");

    // range
    auto* range = app.add_subcommand("range", "temporal range vs a plain-memory equivalent");
    long rg_l = 0, rg_nm = 0, rg_ncm = 0, rg_c = 0, rg_ns = 0;
    range->add_option("--l", rg_l, "layers")->required();
    range->add_option("--n-m", rg_nm, "memory size")->required();
    range->add_option("--n-cm", rg_ncm, "compressed-memory size")->required();
    range->add_option("--c", rg_c, "compression rate")->required();
    range->add_option("--n-s", rg_ns, "window length")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train) return cmd_train(tr_config, tr_seed, tr_out, tr_resume);
        if (*eval) return cmd_eval(ev_ckpt, ev_data, ev_config, ev_split, ev_nm, ev_ncm, ev_windows, ev_out);
        if (*analyze) return cmd_analyze(an_ckpt, an_data, an_config, an_split, an_windows, an_out);
        if (*sample) return cmd_sample(sm_ckpt, sm_prefix, sm_ids, sm_length, sm_p, sm_seed);
        if (*range) return cmd_range(rg_l, rg_nm, rg_ncm, rg_c, rg_ns);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DegenerateInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TrainingFault& e) {
        std::cerr << "fault: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fault: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
