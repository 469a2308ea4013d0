// Command-line front end: curate | synth | train | eval | gradcheck | oracle.
// Exit codes: 0 success, 1 domain error or failed check, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "actalign/commands.hpp"
#include "actalign/error.hpp"

namespace {

int levenshtein(const std::string& a, const std::string& b) {
    std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1));
    for (size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
    for (size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[a.size()][b.size()];
}

void collect_flags(const CLI::App* app, std::vector<std::string>& out) {
    for (const CLI::Option* opt : app->get_options())
        for (const std::string& name : opt->get_lnames()) out.push_back("--" + name);
    for (const CLI::App* sub : app->get_subcommands({})) collect_flags(sub, out);
    for (const CLI::App* sub : app->get_subcommands(nullptr)) collect_flags(sub, out);
}

void suggest_unknown(const CLI::App& app, const std::string& message) {
    // ExtrasError messages carry the offending token; offer the closest flag.
    size_t pos = message.find("--");
    if (pos == std::string::npos) return;
    size_t end = message.find_first_of(" \t\n", pos);
    std::string unknown = message.substr(pos, end == std::string::npos ? end : end - pos);
    std::vector<std::string> flags;
    collect_flags(&app, flags);
    std::sort(flags.begin(), flags.end());
    flags.erase(std::unique(flags.begin(), flags.end()), flags.end());
    std::string best;
    int best_d = 4;
    for (const auto& f : flags) {
        int d = levenshtein(unknown, f);
        if (d < best_d) {
            best_d = d;
            best = f;
        }
    }
    if (!best.empty()) std::cerr << "did you mean " << best << "?\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"action-centric video-text pretraining toolkit"};
    app.require_subcommand(1);

    actalign::CurateArgs curate;
    CLI::App* curate_cmd =
        app.add_subcommand("curate", "filter captions, extract phrases, mint negatives");
    curate_cmd->add_option("--in", curate.in, "input captions JSONL")->required();
    curate_cmd->add_option("--out", curate.out, "output curated JSONL")->required();
    curate_cmd->add_option("--lexicon", curate.lexicon, "lexicon JSON")->required();
    curate_cmd->add_option("--seed", curate.seed, "RNG seed");
    std::string neg_kinds = "verb,order";
    curate_cmd->add_option("--neg", neg_kinds, "negative kinds: verb,order or none");
    curate_cmd->add_option("--per-kind", curate.per_kind, "negatives per kind per caption");

    actalign::SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--config", synth.config, "key = value config file");
    synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "RNG seed");

    actalign::TrainArgs train;
    uint64_t train_seed = 0;
    CLI::App* train_cmd = app.add_subcommand("train", "train the full objective");
    train_cmd->add_option("--config", train.config, "key = value config file");
    train_cmd->add_option("--data", train.data, "dataset directory")->required();
    train_cmd->add_option("--out", train.out, "checkpoint output path")->required();
    train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
    CLI::Option* seed_opt =
        train_cmd->add_option("--seed", train_seed, "overrides the config seed");

    actalign::EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "run a benchmark task");
    eval_cmd->add_option("--task", eval.task, "semantic | logic | dynamics")->required();
    eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval.out, "report file (appended)")->required();

    std::string suite = "all";
    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "finite-difference sweep over all ops");
    grad_cmd->add_option("--suite", suite, "core | dtw | all");

    actalign::OracleArgs oracle;
    std::string oracle_size = "5x4";
    CLI::App* oracle_cmd = app.add_subcommand("oracle", "reference implementations");
    CLI::App* oracle_dtw =
        oracle_cmd->add_subcommand("dtw", "soft vs hard DTW on a random cost matrix");
    oracle_dtw->add_option("--size", oracle_size, "matrix size KxM");
    oracle_dtw->add_option("--seed", oracle.seed, "RNG seed");
    oracle_dtw->add_option("--gamma", oracle.gamma, "soft-min smoothing");
    oracle_cmd->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        if (code == 0) return 0;  // --help / --version
        suggest_unknown(app, e.what());
        return 2;
    }

    try {
        if (*curate_cmd) {
            curate.neg_verb = neg_kinds.find("verb") != std::string::npos;
            curate.neg_order = neg_kinds.find("order") != std::string::npos;
            if (!curate.neg_verb && !curate.neg_order && neg_kinds != "none")
                throw actalign::config_error("--neg must name verb, order, or none");
            return actalign::run_curate(curate);
        }
        if (*synth_cmd) return actalign::run_synth(synth);
        if (*train_cmd) {
            if (seed_opt->count() > 0) train.seed_override = train_seed;
            return actalign::run_train(train);
        }
        if (*eval_cmd) return actalign::run_eval(eval);
        if (*grad_cmd) return actalign::run_gradcheck(suite);
        if (*oracle_dtw) {
            if (std::sscanf(oracle_size.c_str(), "%dx%d", &oracle.k, &oracle.m) != 2)
                throw actalign::config_error("--size must look like 5x4");
            return actalign::run_oracle_dtw(oracle);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
