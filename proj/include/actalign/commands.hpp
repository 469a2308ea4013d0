#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/bench.hpp"
#include "actalign/curation.hpp"
#include "actalign/error.hpp"
#include "actalign/gradsuite.hpp"
#include "actalign/kvconfig.hpp"
#include "actalign/synthgen.hpp"
#include "actalign/trainer.hpp"

namespace actalign {

// Shared entry points for the CLI subcommands. The binary is a thin argv
// shim over these, and the acceptance suite drives the same code paths.

constexpr const char* kToolVersion = "actalign 0.1.0";

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

namespace detail {

inline std::string iso_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string canonical_or_given(const std::string& path) {
    std::error_code ec;
    auto abs = std::filesystem::absolute(path, ec);
    if (ec) return path;
    auto canon = std::filesystem::weakly_canonical(abs, ec);
    return ec ? abs.string() : canon.string();
}

}  // namespace detail

/// Audit record written next to each subcommand's outputs: once before work
/// begins, again (with the end timestamp) on completion.
class RunManifest {
public:
    RunManifest(std::string subcommand, std::string manifest_path)
        : path_(std::move(manifest_path)) {
        doc_["subcommand"] = std::move(subcommand);
        doc_["tool_version"] = kToolVersion;
        doc_["start_time"] = detail::iso_now();
        doc_["end_time"] = nullptr;
        doc_["inputs"] = nlohmann::ordered_json::array();
        doc_["outputs"] = nlohmann::ordered_json::array();
    }

    void add_input(const std::string& p) { add_path("inputs", p); }
    void add_output(const std::string& p) { add_path("outputs", p); }
    void set_seed(uint64_t seed) { doc_["seed"] = seed; }
    void set_config(nlohmann::ordered_json cfg) { doc_["config"] = std::move(cfg); }

    /// Writes the manifest with work still pending.
    void begin() { flush(); }

    /// Stamps the end time and rewrites.
    void finish() {
        doc_["end_time"] = detail::iso_now();
        flush();
    }

private:
    void add_path(const char* key, const std::string& p) {
        nlohmann::ordered_json entry;
        entry["path"] = p;
        entry["canonical"] = detail::canonical_or_given(p);
        doc_[key].push_back(entry);
    }

    void flush() {
        std::ofstream out(path_, std::ios::binary);
        if (!out) throw io_error("cannot write run manifest: " + path_);
        out << doc_.dump(2) << "\n";
    }

    std::string path_;
    nlohmann::ordered_json doc_;
};

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

struct CurateArgs {
    std::string in;
    std::string out;
    std::string lexicon;
    uint64_t seed = 0;
    bool neg_verb = true;
    bool neg_order = true;
    int per_kind = 1;
};

inline int run_curate(const CurateArgs& args, std::ostream& log = std::cout) {
    RunManifest manifest("curate", args.out + ".manifest.json");
    manifest.add_input(args.in);
    manifest.add_input(args.lexicon);
    manifest.add_output(args.out);
    manifest.set_seed(args.seed);
    nlohmann::ordered_json cfg;
    cfg["neg_verb"] = args.neg_verb;
    cfg["neg_order"] = args.neg_order;
    cfg["per_kind"] = args.per_kind;
    manifest.set_config(cfg);
    manifest.begin();

    Lexicon lex = load_lexicon(args.lexicon);
    std::vector<Caption> captions = read_captions_jsonl(args.in);
    CurationConfig ccfg;
    ccfg.seed = args.seed;
    ccfg.verb_altered = args.neg_verb;
    ccfg.order_swapped = args.neg_order;
    ccfg.per_kind = args.per_kind;
    std::vector<CuratedRecord> records = curate_captions(captions, lex, ccfg);
    write_curated_jsonl(args.out, records);

    log << "curate: kept " << records.size() << " of " << captions.size()
        << " captions -> " << args.out << "\n";
    manifest.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string config;  // optional; defaults apply when empty
    std::string out;
    uint64_t seed = 0;
};

inline int run_synth(const SynthArgs& args, std::ostream& log = std::cout) {
    SynthConfig cfg = args.config.empty()
                          ? SynthConfig{}
                          : SynthConfig::from_kv(KvConfig::parse_file(args.config));
    RunManifest manifest("synth",
                         (std::filesystem::path(args.out) / "run_manifest.json").string());
    if (!args.config.empty()) manifest.add_input(args.config);
    manifest.add_output(args.out);
    manifest.set_seed(args.seed);
    nlohmann::ordered_json cj;
    cj["t_frames"] = cfg.t_frames;
    cj["n_patches"] = cfg.n_patches;
    cj["c_dim"] = cfg.c_dim;
    cj["noise_sigma"] = cfg.noise_sigma;
    cj["lambda_obj"] = cfg.lambda_obj;
    cj["m_max"] = cfg.m_max;
    cj["train_clips"] = cfg.train_clips;
    cj["eval_clips"] = cfg.eval_clips;
    cj["semantic_items"] = cfg.semantic_items;
    cj["logic_items"] = cfg.logic_items;
    cj["min_pool"] = cfg.min_pool;
    manifest.set_config(cj);
    std::filesystem::create_directories(args.out);
    manifest.begin();

    Dataset ds = build_dataset(cfg, args.seed);
    write_dataset(ds, args.out);
    log << "synth: " << ds.clips.size() << " clips, " << ds.semantic.size()
        << " semantic items, " << ds.logic.size() << " logic items, "
        << ds.dynamics.size() << " pools -> " << args.out << "\n";
    manifest.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string resume;  // optional checkpoint path
    std::optional<uint64_t> seed_override;
};

inline int run_train(const TrainArgs& args, std::ostream& log = std::cout) {
    Dataset ds = load_dataset(args.data);

    TrainState state = [&]() {
        if (!args.resume.empty()) {
            TrainState st = load_checkpoint(args.resume);
            if (!args.config.empty()) {
                // Only the step budget may change on resume; everything else
                // comes from the checkpoint snapshot.
                KvConfig kv = KvConfig::parse_file(args.config);
                st.model.cfg.steps = kv.get_int("steps", st.model.cfg.steps);
            }
            return st;
        }
        TrainConfig cfg = args.config.empty()
                              ? TrainConfig{}
                              : TrainConfig::from_kv(KvConfig::parse_file(args.config));
        if (args.seed_override) cfg.seed = *args.seed_override;
        Vocab vocab = Vocab::build(vocab_texts(ds));
        const auto& c0 = ds.clips.front();
        return TrainState{Model::init(cfg, vocab, c0.t, c0.n, c0.c)};
    }();

    RunManifest manifest("train", args.out + ".manifest.json");
    if (!args.config.empty()) manifest.add_input(args.config);
    manifest.add_input(args.data);
    if (!args.resume.empty()) manifest.add_input(args.resume);
    manifest.add_output(args.out);
    manifest.add_output(args.out + ".log.jsonl");
    manifest.set_seed(state.model.cfg.seed);
    manifest.set_config(state.model.cfg.to_json());
    manifest.begin();

    std::ofstream steplog(args.out + ".log.jsonl", std::ios::binary);
    if (!steplog) throw io_error("cannot write train log: " + args.out + ".log.jsonl");

    uint64_t autosave_every = 200;
    uint64_t last_saved_step = state.step;
    bool any_saved = false;
    try {
        train_loop(state, ds, [&](const StepLog& s) {
            nlohmann::ordered_json j;
            j["step"] = s.step;
            j["l_vtc"] = s.losses.vtc;
            j["l_distill"] = s.losses.distill;
            j["l_dtw"] = s.losses.dtw;
            j["l_mam"] = s.losses.mam;
            j["total"] = s.losses.total;
            steplog << j.dump() << "\n";
            if (s.step % autosave_every == 0) {
                save_checkpoint(state, args.out);
                last_saved_step = s.step;
                any_saved = true;
            }
        });
    } catch (const numeric_error& e) {
        std::string ref = any_saved
                              ? args.out + " (step " + std::to_string(last_saved_step) + ")"
                              : "none";
        throw numeric_error(std::string(e.what()) +
                            "; aborting, last good checkpoint: " + ref);
    }
    save_checkpoint(state, args.out);
    manifest.finish();
    log << "train: " << state.step << " steps -> " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string task;  // semantic | logic | dynamics
    std::string ckpt;
    std::string data;
    std::string out;
};

inline int run_eval(const EvalArgs& args, std::ostream& log = std::cout) {
    RunManifest manifest("eval", args.out + ".manifest.json");
    manifest.add_input(args.ckpt);
    manifest.add_input(args.data);
    manifest.add_output(args.out);
    manifest.begin();

    TrainState state = load_checkpoint(args.ckpt);
    Dataset ds = load_dataset(args.data);

    std::ifstream ckpt_in(args.ckpt, std::ios::binary);
    std::string ckpt_bytes((std::istreambuf_iterator<char>(ckpt_in)),
                           std::istreambuf_iterator<char>());
    std::string ckpt_hash = hash_hex(ckpt_bytes);
    std::string config_hash = hash_hex(state.model.cfg.to_json().dump());

    nlohmann::ordered_json report;
    if (args.task == "semantic")
        report = semantic_report(state.model, ds, config_hash, ckpt_hash);
    else if (args.task == "logic")
        report = logic_report(state.model, ds, config_hash, ckpt_hash);
    else if (args.task == "dynamics")
        report = dynamics_report(state.model, ds, config_hash, ckpt_hash);
    else
        throw config_error("eval: unknown task '" + args.task +
                           "' (expected semantic|logic|dynamics)");

    if (args.task == "dynamics")
        for (const auto& sk : report.at("skipped_pools"))
            log << "eval: warning: pool " << sk.get<std::string>()
                << " has fewer than 2 pairs, excluded\n";

    std::ofstream out(args.out, std::ios::binary | std::ios::app);  // append-only
    if (!out) throw io_error("cannot open report file: " + args.out);
    out << report.dump() << "\n";
    log << "eval " << args.task << ": " << report.at("metrics").dump() << "\n";
    manifest.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline int run_gradcheck(const std::string& suite, std::ostream& log = std::cout) {
    std::vector<GradCase> cases;
    if (suite == "core")
        cases = gradcheck_core_suite();
    else if (suite == "dtw")
        cases = gradcheck_dtw_suite();
    else if (suite == "all" || suite.empty())
        cases = gradcheck_full_suite();
    else
        throw config_error("gradcheck: unknown suite '" + suite + "'");

    double worst = 0.0;
    for (const auto& c : cases) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-24s max rel err %.3e", c.name.c_str(),
                      c.max_err);
        log << buf << "\n";
        worst = std::max(worst, c.max_err);
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "overall max rel err %.3e (threshold 1e-4)", worst);
    log << buf << "\n";
    return worst < 1e-4 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

struct OracleArgs {
    int k = 5;
    int m = 4;
    uint64_t seed = 0;
    double gamma = 1e-3;
};

inline int run_oracle_dtw(const OracleArgs& args, std::ostream& log = std::cout) {
    if (args.k < 1 || args.m < 1) throw config_error("oracle: size must be KxM, both >= 1");
    Rng rng(derive_seed(args.seed, 0xD7A));
    std::vector<double> cost(static_cast<size_t>(args.k) * args.m);
    for (auto& c : cost) c = rng.uniform() * 2.0;
    double soft = soft_dtw(Array::from({args.k, args.m}, cost), args.gamma).item();
    HardDtwResult hard = hard_dtw_oracle(cost, args.k, args.m);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "dtw oracle %dx%d seed %llu: soft(gamma=%g) = %.6f, hard = %.6f, "
                  "|diff| = %.2e",
                  args.k, args.m, static_cast<unsigned long long>(args.seed), args.gamma,
                  soft, hard.value, std::abs(soft - hard.value));
    log << buf << "\n";
    log << "hard path:";
    for (auto [i, j] : hard.path) log << " (" << i << "," << j << ")";
    log << "\n";
    return std::abs(soft - hard.value) < 0.01 ? 0 : 1;
}

}  // namespace actalign
