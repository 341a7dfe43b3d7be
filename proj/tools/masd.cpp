// Copyright 2026 The MASD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line driver: synth, preprocess, train, eval, sweep, augbench.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "masd/experiment.hpp"

namespace {

using namespace masd;
namespace fs = std::filesystem;

struct Flags {
    std::string config;
    std::string preset;
    bool print_spec = false;
    bool quiet = false;
    std::vector<std::pair<std::string, std::string>> set;  // field path, raw value
};

struct UsageError : Error {
    using Error::Error;
};

void add_common_options(CLI::App* cmd, Flags& flags) {
    cmd->add_option("--config", flags.config, "JSON spec file; later flags override it");
    cmd->add_option("--preset", flags.preset, "Named preset (quick: 3 repeats x 1 fold)")->check(CLI::IsMember({"quick"}));
    cmd->add_flag("--print-spec", flags.print_spec, "Print the resolved spec as JSON and exit");
    cmd->add_flag("-q,--quiet", flags.quiet, "Suppress progress output");
    // Key flags mapped onto spec fields.
    const std::vector<std::pair<std::string, std::string>> mapped{
        {"--dataset", "dataset"},         {"--corpus", "corpus"},       {"--text-emb", "text_emb"},
        {"--speech-emb", "speech_emb"},   {"--approach", "approach"},   {"--cv", "cv"},
        {"--task", "task"},               {"--noise", "noise.kind"},    {"--noise-domain", "augment.domain"},
        {"--lambda-t", "loss.lambda_t"},  {"--lambda-s", "loss.lambda_s"}, {"--tau", "loss.tau"},
        {"--seed", "seed"},               {"--repeats", "repeats"},     {"--out", "out"},
        {"--run", "eval.run"}};
    for (const auto& [flag, path] : mapped) {
        cmd->add_option_function<std::string>(
            flag,
            [&flags, path = path](const std::string& v) {
                flags.set.emplace_back(path, v);
                if (path == "noise.kind") flags.set.emplace_back("augment.enabled", "true");
            },
            "Sets " + path);
    }
    cmd->allow_extras();
}

nlohmann::ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config '" + path + "'");
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config '" + path + "': " + e.what());
    }
}

ExperimentSpec resolve_spec(Command command, const Flags& flags, const std::vector<std::string>& extras) {
    ExperimentSpec defaults;
    defaults.command = command;
    auto doc = to_json(defaults);
    try {
        if (!flags.config.empty()) {
            merge_json(doc, read_json_file(flags.config));
            doc["command"] = to_string(command);
        }
        if (flags.preset == "quick") apply_quick_preset(doc);
        for (const auto& [path, value] : flags.set) apply_override(doc, path + "=" + value);
        for (const auto& arg : extras) {
            if (arg.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + arg + "'");
            apply_override(doc, arg.substr(2));
        }
        return spec_from_json(doc);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
}

std::vector<EnvelopeTrial> load_inputs(const ExperimentSpec& s, std::ostream* log) {
    if (log) *log << "reading " << s.dataset << std::endl;
    const auto ds = read_dataset(s.dataset);
    if (log && ds.kind == "raw") *log << "preprocessing " << ds.trials.size() << " trials" << std::endl;
    return load_envelopes(ds, s.preprocess);
}

void print_average(const std::vector<RunResult>& results) {
    for (const auto& row : aggregate(results)) {
        if (row.subject != "Average") continue;
        std::cout << row.approach << " average over " << row.n << " runs: top1 " << format_double(row.top1.mean)
                  << " (sd " << format_double(row.top1.sd) << "), top5 " << format_double(row.top5.mean) << " (sd "
                  << format_double(row.top5.sd) << "), bca " << format_double(row.bca.mean) << "\n";
    }
}

int cmd_synth(const ExperimentSpec& s, std::ostream* log) {
    const auto corpus = load_corpus_for(s);
    auto tables = load_tables(s, corpus);
    fs::create_directories(s.out);
    const auto pseudo = pseudo_tables(s.synth, corpus);
    if (!tables.text) {
        tables.text = pseudo.text;
        save_embedding_table(*tables.text, (fs::path(s.out) / "text_pseudo.json").string());
    }
    if (!tables.speech) {
        tables.speech = pseudo.speech;
        save_embedding_table(*tables.speech, (fs::path(s.out) / "speech_pseudo.json").string());
    }
    std::vector<const EmbeddingTable*> coupled;
    if (s.synth.config.embedding_coupling > 0.0) coupled = {&*tables.text, &*tables.speech};
    if (log) *log << "generating " << s.synth.config.n_subjects << " subject(s)" << std::endl;
    const auto ds = generate(s.synth.config, corpus, coupled);
    write_dataset(ds, s.out);
    std::cout << "wrote " << ds.trials.size() << " trials (" << ds.channels << " channels x " << ds.samples
              << " samples) to " << s.out << "\n";
    return 0;
}

void write_energy_maps(const std::vector<EnvelopeTrial>& trials, const ExperimentSpec& s) {
    write_text(fs::path(s.out) / "energy_by_word.csv", energy_csv(energy_by_word(trials)));
    write_text(fs::path(s.out) / "energy_by_window.csv", energy_csv(energy_by_window(trials, s.energy_window)));
}

int cmd_preprocess(const ExperimentSpec& s, std::ostream* log) {
    const auto ds = read_dataset(s.dataset);
    if (ds.kind != "raw") throw UsageError("preprocess: dataset '" + s.dataset + "' is already preprocessed");
    if (log) *log << "preprocessing " << ds.trials.size() << " trials" << std::endl;
    const auto env = preprocess_all(ds, s.preprocess);
    write_dataset(envelope_dataset(env, s.preprocess.fs_out), s.out);
    write_energy_maps(env, s);
    std::cout << "wrote " << env.size() << " envelope trials and energy maps to " << s.out << "\n";
    return 0;
}

int cmd_train(const ExperimentSpec& s, std::ostream* log) {
    const auto corpus = load_corpus_for(s);
    const auto tables = load_tables(s, corpus);
    const auto trials = load_inputs(s, log);
    const auto run = run_training(s, trials, corpus, tables, log);
    print_average(run.results);
    std::cout << "results in " << s.out << "\n";
    return 0;
}

int cmd_eval(const ExperimentSpec& s, std::ostream* log) {
    std::ifstream in(fs::path(s.run) / "manifest.json");
    if (!in) throw UsageError("eval: no manifest.json in '" + s.run + "'");
    const auto manifest = nlohmann::ordered_json::parse(in);
    auto run_spec = spec_from_json(manifest.at("spec"));
    if (!s.dataset.empty()) run_spec.dataset = s.dataset;
    const auto corpus = load_corpus_for(run_spec);
    const auto trials = load_inputs(run_spec, log);
    const auto results = rescore_run(s.run, trials, corpus);
    const auto csv = results_csv(results);
    write_text(fs::path(s.out) / "eval_results.csv", csv);
    write_energy_maps(trials, s);
    print_average(results);
    std::ifstream original(fs::path(s.run) / "results.csv");
    const std::string recorded((std::istreambuf_iterator<char>(original)), std::istreambuf_iterator<char>());
    std::cout << "re-scored " << results.size() << " checkpoint(s); "
              << (recorded == csv ? "matches" : "DIFFERS FROM") << " the recorded results.csv\n";
    return recorded == csv ? 0 : 1;
}

int cmd_sweep(const ExperimentSpec& s, std::ostream* log) {
    const auto corpus = load_corpus_for(s);
    const auto tables = load_tables(s, corpus);
    const auto trials = load_inputs(s, log);
    std::cout << run_sweep(s, trials, corpus, tables, log);
    return 0;
}

int cmd_augbench(const ExperimentSpec& s, std::ostream* log) {
    const auto corpus = load_corpus_for(s);
    const auto tables = load_tables(s, corpus);
    const auto trials = load_inputs(s, log);
    std::cout << run_augbench(s, trials, corpus, tables, log);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MASD: speech decoding from MEG-style recordings with text and speech assistance"};
    app.require_subcommand(1);
    Flags flags;
    const std::vector<std::pair<Command, std::string>> commands{
        {Command::Synth, "Generate a synthetic dataset"},
        {Command::Preprocess, "Preprocess a raw dataset into envelopes and energy maps"},
        {Command::Train, "Train and evaluate over subjects, folds and repeats"},
        {Command::Eval, "Re-score the checkpoints of a run directory"},
        {Command::Sweep, "Train over a grid of alignment weights"},
        {Command::AugBench, "Compare noise augmentations against no augmentation"}};
    std::vector<std::pair<Command, CLI::App*>> subs;
    for (const auto& [c, help] : commands) {
        auto* sub = app.add_subcommand(to_string(c), help);
        add_common_options(sub, flags);
        subs.emplace_back(c, sub);
    }
    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [command, sub] : subs) {
            if (!sub->parsed()) continue;
            const auto spec = resolve_spec(command, flags, sub->remaining());
            if (flags.print_spec) {
                std::cout << to_json(spec).dump(2) << "\n";
                return 0;
            }
            if (const auto v = validate(spec); !v.empty()) {
                for (const auto& m : v) std::cerr << "invalid spec: " << m << "\n";
                return 2;
            }
            std::ostream* log = flags.quiet ? nullptr : &std::cerr;
            switch (command) {
                case Command::Synth: return cmd_synth(spec, log);
                case Command::Preprocess: return cmd_preprocess(spec, log);
                case Command::Train: return cmd_train(spec, log);
                case Command::Eval: return cmd_eval(spec, log);
                case Command::Sweep: return cmd_sweep(spec, log);
                case Command::AugBench: return cmd_augbench(spec, log);
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
