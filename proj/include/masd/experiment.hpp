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

#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/augment.hpp"
#include "masd/common.hpp"
#include "masd/corpus.hpp"
#include "masd/dsp.hpp"
#include "masd/eval.hpp"
#include "masd/modality.hpp"
#include "masd/net.hpp"
#include "masd/synth.hpp"
#include "masd/trainer.hpp"

namespace masd {

enum class Command { Synth, Preprocess, Train, Eval, Sweep, AugBench };
enum class Approach { Single, Masd };

inline std::string to_string(Command c) {
    switch (c) {
        case Command::Synth: return "synth";
        case Command::Preprocess: return "preprocess";
        case Command::Train: return "train";
        case Command::Eval: return "eval";
        case Command::Sweep: return "sweep";
        case Command::AugBench: return "augbench";
    }
    return "train";
}

inline Command parse_command(std::string_view s) {
    for (auto c : {Command::Synth, Command::Preprocess, Command::Train, Command::Eval, Command::Sweep, Command::AugBench}) {
        if (s == to_string(c)) return c;
    }
    throw InvalidArgument("unknown command '" + std::string(s) + "'");
}

inline std::string to_string(Approach a) { return a == Approach::Masd ? "masd" : "single"; }

inline Approach parse_approach(std::string_view s) {
    if (s == "masd") return Approach::Masd;
    if (s == "single") return Approach::Single;
    throw InvalidArgument("unknown approach '" + std::string(s) + "' (expected single|masd)");
}

struct SynthSpec {
    SynthConfig config;
    /// Dimension and class clustering of the pseudo embedding tables written
    /// when no table files are given.
    int pseudo_dim = 16;
    std::optional<TaskKind> pseudo_cluster = TaskKind::Initial8;
};

struct SweepSpec {
    std::string parameter = "lambda_t";  // lambda_t | lambda_s | both
    std::vector<double> values{0.0, 0.1, 1.0, 10.0};
};

struct AugBenchSpec {
    std::vector<NoiseKind> kinds{NoiseKind::Gaussian, NoiseKind::Poisson, NoiseKind::Pink, NoiseKind::SaltPepper};
    std::vector<NoiseDomain> domains{NoiseDomain::Time, NoiseDomain::Frequency};
};

struct ExperimentSpec {
    Command command = Command::Train;
    std::string dataset;
    std::string corpus;  // empty selects the bundled corpus
    std::string text_emb;
    std::string speech_emb;
    std::string out = "runs/masd";
    Approach approach = Approach::Single;
    SplitMode cv = SplitMode::WithinSubject5Fold;
    TaskKind task = TaskKind::Word;
    std::vector<int> subjects;  // empty = every subject in the dataset
    std::vector<int> folds;     // within: fold ids; cross: held-out subjects; empty = all
    int repeats = 20;
    std::uint64_t seed = 0;
    PreprocessConfig preprocess;
    ModelConfig model;
    TrainConfig train;
    bool augment = false;
    Augmentation augmentation;
    SynthSpec synth;
    SweepSpec sweep;
    AugBenchSpec augbench;
    std::string run;  // eval: run directory to re-score
    std::size_t energy_window = 40;
};

// ---------------------------------------------------------------------------
// JSON mirror

inline nlohmann::ordered_json to_json(const ExperimentSpec& s) {
    using J = nlohmann::ordered_json;
    J j;
    j["command"] = to_string(s.command);
    j["dataset"] = s.dataset;
    j["corpus"] = s.corpus;
    j["text_emb"] = s.text_emb;
    j["speech_emb"] = s.speech_emb;
    j["out"] = s.out;
    j["approach"] = to_string(s.approach);
    j["cv"] = to_string(s.cv);
    j["task"] = to_string(s.task);
    j["subjects"] = s.subjects;
    j["folds"] = s.folds;
    j["repeats"] = s.repeats;
    j["seed"] = s.seed;
    const auto& p = s.preprocess;
    j["preprocess"] = J{{"band_low", p.band_low},   {"band_high", p.band_high}, {"band_order", p.band_order},
                        {"notch", p.notch},         {"notch_q", p.notch_q},     {"clamp", p.clamp},
                        {"fs_out", p.fs_out},       {"antialias_order", p.antialias_order}};
    const auto& m = s.model;
    j["model"] = J{{"temporal_kernel", m.temporal_kernel},
                   {"n_temporal_filters", m.n_temporal_filters},
                   {"depth_multiplier", m.depth_multiplier},
                   {"separable_kernel", m.separable_kernel},
                   {"pool1", m.pool1},
                   {"pool2", m.pool2},
                   {"dropout_p", m.dropout_p},
                   {"branch_dim_t", m.branch_dim_t},
                   {"branch_dim_s", m.branch_dim_s}};
    const auto& t = s.train;
    j["train"] = J{{"batch_size", t.batch_size},
                   {"lr", t.lr},
                   {"weight_decay", t.weight_decay},
                   {"max_epochs", t.max_epochs},
                   {"patience", t.patience}};
    j["loss"] = J{{"tau", t.loss.tau}, {"lambda_t", t.loss.lambda_t}, {"lambda_s", t.loss.lambda_s}};
    j["augment"] = J{{"enabled", s.augment}, {"domain", to_string(s.augmentation.domain)}};
    const auto& n = s.augmentation.noise;
    j["noise"] = J{{"kind", to_string(n.kind)}, {"mu", n.mu},   {"sigma", n.sigma}, {"kappa", n.kappa},
                   {"alpha", n.alpha},          {"p_s", n.p_s}, {"p_p", n.p_p},     {"amplitude", n.amplitude},
                   {"copies", n.copies}};
    const auto& c = s.synth.config;
    j["synth"] = J{{"n_subjects", c.n_subjects},
                   {"n_blocks", c.n_blocks},
                   {"channels", c.channels},
                   {"fs_raw", c.fs_raw},
                   {"trial_secs", c.trial_secs},
                   {"snr_db", c.snr_db},
                   {"template_mode", to_string(c.template_mode)},
                   {"embedding_coupling", c.embedding_coupling},
                   {"specificity", c.specificity},
                   {"subject_variability", c.subject_variability},
                   {"seed", c.seed},
                   {"pseudo_dim", s.synth.pseudo_dim},
                   {"pseudo_cluster", s.synth.pseudo_cluster ? to_string(*s.synth.pseudo_cluster) : "none"}};
    j["sweep"] = J{{"parameter", s.sweep.parameter}, {"values", s.sweep.values}};
    J kinds = J::array(), domains = J::array();
    for (auto k : s.augbench.kinds) kinds.push_back(to_string(k));
    for (auto d : s.augbench.domains) domains.push_back(to_string(d));
    j["augbench"] = J{{"kinds", kinds}, {"domains", domains}};
    j["eval"] = J{{"run", s.run}, {"energy_window", s.energy_window}};
    return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::ordered_json& j, const std::string& key, T& out, const std::string& path) {
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidArgument(path + key + ": missing or wrong type");
    }
}

template <typename T, typename Parse>
void read_enum(const nlohmann::ordered_json& j, const std::string& key, T& out, Parse parse, const std::string& path) {
    std::string s;
    read_field(j, key, s, path);
    try {
        out = parse(s);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path + key + ": " + e.what());
    }
}

}  // namespace detail

/// Reads a complete spec document (as produced by to_json).
inline ExperimentSpec spec_from_json(const nlohmann::ordered_json& j) {
    using detail::read_enum;
    using detail::read_field;
    ExperimentSpec s;
    read_enum(j, "command", s.command, parse_command, "");
    read_field(j, "dataset", s.dataset, "");
    read_field(j, "corpus", s.corpus, "");
    read_field(j, "text_emb", s.text_emb, "");
    read_field(j, "speech_emb", s.speech_emb, "");
    read_field(j, "out", s.out, "");
    read_enum(j, "approach", s.approach, parse_approach, "");
    read_enum(j, "cv", s.cv, parse_split_mode, "");
    read_enum(j, "task", s.task, parse_task, "");
    read_field(j, "subjects", s.subjects, "");
    read_field(j, "folds", s.folds, "");
    read_field(j, "repeats", s.repeats, "");
    read_field(j, "seed", s.seed, "");

    const auto& p = j.at("preprocess");
    read_field(p, "band_low", s.preprocess.band_low, "preprocess.");
    read_field(p, "band_high", s.preprocess.band_high, "preprocess.");
    read_field(p, "band_order", s.preprocess.band_order, "preprocess.");
    read_field(p, "notch", s.preprocess.notch, "preprocess.");
    read_field(p, "notch_q", s.preprocess.notch_q, "preprocess.");
    read_field(p, "clamp", s.preprocess.clamp, "preprocess.");
    read_field(p, "fs_out", s.preprocess.fs_out, "preprocess.");
    read_field(p, "antialias_order", s.preprocess.antialias_order, "preprocess.");

    const auto& m = j.at("model");
    read_field(m, "temporal_kernel", s.model.temporal_kernel, "model.");
    read_field(m, "n_temporal_filters", s.model.n_temporal_filters, "model.");
    read_field(m, "depth_multiplier", s.model.depth_multiplier, "model.");
    read_field(m, "separable_kernel", s.model.separable_kernel, "model.");
    read_field(m, "pool1", s.model.pool1, "model.");
    read_field(m, "pool2", s.model.pool2, "model.");
    read_field(m, "dropout_p", s.model.dropout_p, "model.");
    read_field(m, "branch_dim_t", s.model.branch_dim_t, "model.");
    read_field(m, "branch_dim_s", s.model.branch_dim_s, "model.");

    const auto& t = j.at("train");
    read_field(t, "batch_size", s.train.batch_size, "train.");
    read_field(t, "lr", s.train.lr, "train.");
    read_field(t, "weight_decay", s.train.weight_decay, "train.");
    read_field(t, "max_epochs", s.train.max_epochs, "train.");
    read_field(t, "patience", s.train.patience, "train.");
    const auto& l = j.at("loss");
    read_field(l, "tau", s.train.loss.tau, "loss.");
    read_field(l, "lambda_t", s.train.loss.lambda_t, "loss.");
    read_field(l, "lambda_s", s.train.loss.lambda_s, "loss.");

    const auto& a = j.at("augment");
    read_field(a, "enabled", s.augment, "augment.");
    read_enum(a, "domain", s.augmentation.domain, parse_noise_domain, "augment.");
    const auto& n = j.at("noise");
    auto& nc = s.augmentation.noise;
    read_enum(n, "kind", nc.kind, parse_noise_kind, "noise.");
    read_field(n, "mu", nc.mu, "noise.");
    read_field(n, "sigma", nc.sigma, "noise.");
    read_field(n, "kappa", nc.kappa, "noise.");
    read_field(n, "alpha", nc.alpha, "noise.");
    read_field(n, "p_s", nc.p_s, "noise.");
    read_field(n, "p_p", nc.p_p, "noise.");
    read_field(n, "amplitude", nc.amplitude, "noise.");
    read_field(n, "copies", nc.copies, "noise.");

    const auto& y = j.at("synth");
    auto& sc = s.synth.config;
    read_field(y, "n_subjects", sc.n_subjects, "synth.");
    read_field(y, "n_blocks", sc.n_blocks, "synth.");
    read_field(y, "channels", sc.channels, "synth.");
    read_field(y, "fs_raw", sc.fs_raw, "synth.");
    read_field(y, "trial_secs", sc.trial_secs, "synth.");
    read_field(y, "snr_db", sc.snr_db, "synth.");
    read_enum(y, "template_mode", sc.template_mode, parse_template_mode, "synth.");
    read_field(y, "embedding_coupling", sc.embedding_coupling, "synth.");
    read_field(y, "specificity", sc.specificity, "synth.");
    read_field(y, "subject_variability", sc.subject_variability, "synth.");
    read_field(y, "seed", sc.seed, "synth.");
    read_field(y, "pseudo_dim", s.synth.pseudo_dim, "synth.");
    std::string cluster;
    read_field(y, "pseudo_cluster", cluster, "synth.");
    if (cluster == "none") {
        s.synth.pseudo_cluster.reset();
    } else {
        TaskKind k = TaskKind::Word;
        read_enum(y, "pseudo_cluster", k, parse_task, "synth.");
        s.synth.pseudo_cluster = k;
    }

    const auto& w = j.at("sweep");
    read_field(w, "parameter", s.sweep.parameter, "sweep.");
    read_field(w, "values", s.sweep.values, "sweep.");
    const auto& b = j.at("augbench");
    std::vector<std::string> kinds, domains;
    read_field(b, "kinds", kinds, "augbench.");
    read_field(b, "domains", domains, "augbench.");
    s.augbench.kinds.clear();
    s.augbench.domains.clear();
    try {
        for (const auto& k : kinds) s.augbench.kinds.push_back(parse_noise_kind(k));
        for (const auto& d : domains) s.augbench.domains.push_back(parse_noise_domain(d));
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("augbench: ") + e.what());
    }
    const auto& e = j.at("eval");
    read_field(e, "run", s.run, "eval.");
    read_field(e, "energy_window", s.energy_window, "eval.");
    return s;
}

/// Recursively copies `patch` into `base`. Every key must already exist in
/// `base`, which catches misspelled fields.
inline void merge_json(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch, const std::string& path = "") {
    if (!patch.is_object()) throw InvalidArgument("config: expected an object at '" + path + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw InvalidArgument("config: unknown field '" + key + "'");
        auto& slot = base[it.key()];
        if (slot.is_object()) {
            merge_json(slot, it.value(), key);
        } else {
            slot = it.value();
        }
    }
}

/// Applies `a.b.c=value` to a spec document. The value is read as JSON
/// unless the existing field is a string, then it is taken verbatim.
inline void apply_override(nlohmann::ordered_json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw InvalidArgument("override '" + assignment + "' is not of the form field.path=value");
    }
    const std::string path = assignment.substr(0, eq), value = assignment.substr(eq + 1);
    nlohmann::ordered_json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) throw InvalidArgument("unknown field '" + path + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw InvalidArgument("field '" + path + "' is a section, not a value");
    if (node->is_string()) {
        *node = value;
        return;
    }
    try {
        *node = nlohmann::ordered_json::parse(value);
    } catch (const nlohmann::json::exception&) {
        throw InvalidArgument("invalid value '" + value + "' for '" + path + "'");
    }
}

/// Desk-scale preset: 3 repeats of a single fold.
inline void apply_quick_preset(nlohmann::ordered_json& doc) {
    doc["repeats"] = 3;
    if (doc["folds"].empty() && doc["cv"] == "within") doc["folds"] = {0};
}

/// Every violated constraint, each message naming its field.
inline std::vector<std::string> validate(const ExperimentSpec& s) {
    std::vector<std::string> out;
    const bool needs_data = s.command == Command::Preprocess || s.command == Command::Train ||
                            s.command == Command::Sweep || s.command == Command::AugBench;
    if (needs_data && s.dataset.empty()) out.push_back("dataset is required for " + to_string(s.command));
    if (s.command == Command::Eval && s.run.empty()) out.push_back("eval.run is required for eval");
    if (s.out.empty()) out.push_back("out must not be empty");
    const bool has_table = !s.text_emb.empty() || !s.speech_emb.empty();
    if (s.command != Command::Synth) {
        if (s.approach == Approach::Masd && !has_table) {
            out.push_back("approach masd requires text_emb or speech_emb");
        }
        if (s.approach == Approach::Single && has_table) {
            out.push_back("approach single must not set text_emb or speech_emb");
        }
    }
    if (s.repeats < 1) out.push_back("repeats must be >= 1");
    if (s.cv == SplitMode::WithinSubject5Fold) {
        for (int f : s.folds) {
            if (f < 0 || f >= kWithinFolds) out.push_back("folds entries must lie in [0, 5) for cv within");
        }
    }
    if (!(s.preprocess.band_low > 0.0 && s.preprocess.band_low < s.preprocess.band_high)) {
        out.push_back("preprocess.band_low must lie in (0, band_high)");
    }
    if (!(s.preprocess.fs_out > 0.0)) out.push_back("preprocess.fs_out must be > 0");
    if (!(s.preprocess.clamp > 0.0)) out.push_back("preprocess.clamp must be > 0");
    for (auto& m : validate(s.model)) out.push_back(std::move(m));
    auto train = s.train;
    train.augmentation.reset();
    for (auto& m : validate(train)) out.push_back(std::move(m));
    for (auto& m : validate(s.augmentation.noise)) out.push_back(std::move(m));
    for (auto& m : validate(s.synth.config)) out.push_back(std::move(m));
    if (s.synth.pseudo_dim < 1) out.push_back("synth.pseudo_dim must be >= 1");
    if (s.command == Command::Sweep) {
        if (s.approach != Approach::Masd) out.push_back("sweep requires approach masd");
        if (s.sweep.parameter != "lambda_t" && s.sweep.parameter != "lambda_s" && s.sweep.parameter != "both") {
            out.push_back("sweep.parameter must be lambda_t, lambda_s or both");
        }
        if (s.sweep.values.empty()) out.push_back("sweep.values must not be empty");
        for (double v : s.sweep.values) {
            if (!(v >= 0.0)) out.push_back("sweep.values entries must be >= 0");
        }
    }
    if (s.command == Command::AugBench && (s.augbench.kinds.empty() || s.augbench.domains.empty())) {
        out.push_back("augbench.kinds and augbench.domains must not be empty");
    }
    if (s.energy_window < 1) out.push_back("eval.energy_window must be >= 1");
    return out;
}

// ---------------------------------------------------------------------------
// Running

inline std::string spec_fingerprint(const ExperimentSpec& s) { return fingerprint(to_json(s).dump()); }

inline Corpus load_corpus_for(const ExperimentSpec& s) {
    return s.corpus.empty() ? Corpus::bundled() : Corpus::load(s.corpus);
}

/// Loaded assisting tables; either may be absent.
struct Tables {
    std::optional<EmbeddingTable> text, speech;
    Assist assist() const { return {text ? &*text : nullptr, speech ? &*speech : nullptr}; }
};

inline Tables load_tables(const ExperimentSpec& s, const Corpus& corpus) {
    Tables t;
    if (!s.text_emb.empty()) t.text = load_embedding_table(s.text_emb, corpus);
    if (!s.speech_emb.empty()) t.speech = load_embedding_table(s.speech_emb, corpus);
    return t;
}

/// The text and speech pseudo tables that `synth` writes next to a dataset
/// when no table files are supplied.
inline Tables pseudo_tables(const SynthSpec& spec, const Corpus& corpus) {
    PseudoEmbeddingConfig pc;
    pc.dim = spec.pseudo_dim;
    pc.cluster_by = spec.pseudo_cluster;
    Tables t;
    pc.seed = derive_seed(spec.config.seed, 11);
    t.text = pseudo_embeddings(Modality::Text, corpus, pc);
    pc.seed = derive_seed(spec.config.seed, 12);
    t.speech = pseudo_embeddings(Modality::Speech, corpus, pc);
    return t;
}

/// Model configuration for the given data geometry, task and tables: the
/// branch widths follow the table dimensions.
inline ModelConfig model_config_for(const ExperimentSpec& s, const Corpus& corpus, std::size_t channels,
                                    std::size_t samples, const Tables& tables) {
    auto m = s.model;
    m.channels = static_cast<int>(channels);
    m.samples = static_cast<int>(samples);
    m.n_classes = corpus.n_classes(s.task);
    if (tables.text) m.branch_dim_t = tables.text->dim;
    if (tables.speech) m.branch_dim_s = tables.speech->dim;
    return m;
}

inline TrainConfig train_config_for(const ExperimentSpec& s, std::uint64_t seed) {
    auto t = s.train;
    t.seed = seed;
    if (s.approach == Approach::Single) t.loss.lambda_t = t.loss.lambda_s = 0.0;
    if (s.augment) t.augmentation = s.augmentation;
    else t.augmentation.reset();
    return t;
}

/// One trained model of a run.
struct RunEntry {
    std::string tag;
    int subject = 0;
    int fold = 0;
    int repeat = 0;
    std::uint64_t seed = 0;
    std::string checkpoint;
    std::string history;
};

struct RunOutput {
    std::vector<RunResult> results;
    std::vector<RunEntry> entries;
    std::vector<std::string> artifacts;
};

inline std::uint64_t repeat_seed(std::uint64_t base, int repeat) {
    return derive_seed(base, static_cast<std::uint64_t>(repeat));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    os << text;
    if (!os) throw Error("write failed for '" + p.string() + "'");
}

/// A unit of work: which trials it sees and which split to apply.
struct Job {
    int subject = 0;
    int fold = 0;
    std::vector<std::size_t> members;  // indices into the full trial list
};

inline std::vector<Job> plan_jobs(const ExperimentSpec& s, std::span<const EnvelopeTrial> trials) {
    std::map<int, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < trials.size(); ++i) by_subject[trials[i].subject].push_back(i);
    std::vector<int> subjects = s.subjects;
    if (subjects.empty()) {
        for (const auto& [id, idx] : by_subject) subjects.push_back(id);
    }
    for (int id : subjects) {
        if (!by_subject.count(id)) throw InvalidArgument("subjects: dataset has no subject " + std::to_string(id));
    }
    std::vector<Job> jobs;
    if (s.cv == SplitMode::WithinSubject5Fold) {
        std::vector<int> folds = s.folds;
        if (folds.empty()) {
            for (int f = 0; f < kWithinFolds; ++f) folds.push_back(f);
        }
        for (int id : subjects) {
            for (int f : folds) jobs.push_back({id, f, by_subject[id]});
        }
    } else {
        std::vector<std::size_t> pool;
        for (int id : subjects) pool.insert(pool.end(), by_subject[id].begin(), by_subject[id].end());
        std::sort(pool.begin(), pool.end());
        std::vector<int> held = s.folds.empty() ? subjects : s.folds;
        for (int h : held) {
            if (std::find(subjects.begin(), subjects.end(), h) == subjects.end()) {
                throw InvalidArgument("folds: held-out subject " + std::to_string(h) + " is not among the subjects");
            }
            jobs.push_back({h, h, pool});
        }
    }
    return jobs;
}

/// Trains and scores every (job, repeat) pair and writes the run directory:
/// results.csv, summary.json, histories/, checkpoints/ and manifest.json.
inline RunOutput run_training(const ExperimentSpec& s, std::span<const EnvelopeTrial> trials, const Corpus& corpus,
                              const Tables& tables, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    if (const auto v = validate(s); !v.empty()) throw InvalidArgument(v.front());
    if (trials.empty()) throw InvalidArgument("dataset has no trials");
    const fs::path out(s.out);
    fs::create_directories(out);
    const auto mc = model_config_for(s, corpus, trials[0].data.rows(), trials[0].data.cols(), tables);
    const Assist assist = s.approach == Approach::Masd ? tables.assist() : Assist{};
    const auto approach = to_string(s.approach);
    const auto fp = spec_fingerprint(s);

    RunOutput run;
    for (const auto& job : plan_jobs(s, trials)) {
        std::vector<EnvelopeTrial> subset;
        std::vector<int> labels;
        subset.reserve(job.members.size());
        for (auto i : job.members) {
            subset.push_back(trials[i]);
            labels.push_back(corpus.task_label(trials[i].word_id, s.task));
        }
        for (int r = 0; r < s.repeats; ++r) {
            const auto seed = repeat_seed(s.seed, r);
            const auto split = s.cv == SplitMode::WithinSubject5Fold ? split_within(subset, job.fold, seed)
                                                                     : split_cross(subset, job.fold, seed);
            Model model(mc, derive_seed(seed, 1));
            const auto fit_result = fit(model, split, subset, labels, train_config_for(s, seed), assist);
            auto res = score(model, subset, labels, split, mc.n_classes);
            res.approach = approach;
            res.task = s.task;
            res.subject = job.subject;
            res.fold = job.fold;
            res.seed = seed;
            res.fingerprint = fp;

            RunEntry e;
            e.tag = approach + "_s" + std::to_string(job.subject) + "_f" + std::to_string(job.fold) + "_r" +
                    std::to_string(r);
            e.subject = job.subject;
            e.fold = job.fold;
            e.repeat = r;
            e.seed = seed;
            e.checkpoint = "checkpoints/" + e.tag + ".ckpt";
            e.history = "histories/" + e.tag + ".csv";
            fs::create_directories(out / "checkpoints");
            save_checkpoint(model, (out / e.checkpoint).string());
            write_text(out / e.history, history_csv(fit_result.history));
            run.artifacts.push_back(e.checkpoint);
            run.artifacts.push_back(e.history);
            if (log) {
                *log << e.tag << ": best epoch " << fit_result.best_epoch << ", top1 " << format_double(res.top1)
                     << ", top5 " << format_double(res.top5) << ", bca " << format_double(res.bca) << std::endl;
            }
            run.results.push_back(res);
            run.entries.push_back(std::move(e));
        }
    }

    write_text(out / "results.csv", results_csv(run.results));
    write_text(out / "summary.json", summary_json(run.results).dump(2) + "\n");
    run.artifacts.insert(run.artifacts.begin(), {"results.csv", "summary.json"});

    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["fingerprint"] = fp;
    manifest["seed"] = s.seed;
    manifest["created"] = static_cast<std::int64_t>(std::time(nullptr));
    manifest["spec"] = to_json(s);
    manifest["model"] = nlohmann::ordered_json{{"channels", mc.channels},
                                               {"samples", mc.samples},
                                               {"n_classes", mc.n_classes},
                                               {"branch_dim_t", mc.branch_dim_t},
                                               {"branch_dim_s", mc.branch_dim_s}};
    manifest["artifacts"] = run.artifacts;
    auto& runs = manifest["runs"] = nlohmann::ordered_json::array();
    for (const auto& e : run.entries) {
        runs.push_back({{"tag", e.tag},
                        {"subject", e.subject},
                        {"fold", e.fold},
                        {"repeat", e.repeat},
                        {"seed", e.seed},
                        {"checkpoint", e.checkpoint},
                        {"history", e.history}});
    }
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    return run;
}

/// Mean/SD row over every result of a run, used by sweep and augbench tables.
inline std::string summary_row(const std::vector<RunResult>& results) {
    std::vector<double> t1, t5, b;
    for (const auto& r : results) {
        t1.push_back(r.top1);
        t5.push_back(r.top5);
        b.push_back(r.bca);
    }
    const auto a = summarize(t1), c = summarize(t5), d = summarize(b);
    return std::to_string(results.size()) + ',' + format_double(a.mean) + ',' + format_double(a.sd) + ',' +
           format_double(c.mean) + ',' + format_double(c.sd) + ',' + format_double(d.mean) + ',' + format_double(d.sd);
}

inline constexpr const char* kSummaryColumns = "n,top1_mean,top1_sd,top5_mean,top5_sd,bca_mean,bca_sd";

/// One training run per grid value; writes sweep.csv with one row per value.
inline std::string run_sweep(const ExperimentSpec& s, std::span<const EnvelopeTrial> trials, const Corpus& corpus,
                             const Tables& tables, std::ostream* log = nullptr) {
    std::string csv = std::string("parameter,value,") + kSummaryColumns + "\n";
    for (double v : s.sweep.values) {
        auto sub = s;
        sub.command = Command::Train;
        if (s.sweep.parameter != "lambda_s") sub.train.loss.lambda_t = v;
        if (s.sweep.parameter != "lambda_t") sub.train.loss.lambda_s = v;
        sub.out = (std::filesystem::path(s.out) / (s.sweep.parameter + "_" + format_general(v))).string();
        if (log) *log << "sweep " << s.sweep.parameter << " = " << format_general(v) << std::endl;
        const auto run = run_training(sub, trials, corpus, tables, log);
        csv += s.sweep.parameter + ',' + format_general(v) + ',' + summary_row(run.results) + '\n';
    }
    write_text(std::filesystem::path(s.out) / "sweep.csv", csv);
    return csv;
}

/// Baseline without augmentation, then every noise kind in every domain.
inline std::string run_augbench(const ExperimentSpec& s, std::span<const EnvelopeTrial> trials, const Corpus& corpus,
                                const Tables& tables, std::ostream* log = nullptr) {
    std::string csv = std::string("kind,domain,") + kSummaryColumns + "\n";
    auto base = s;
    base.command = Command::Train;
    base.augment = false;
    base.out = (std::filesystem::path(s.out) / "none").string();
    if (log) *log << "augbench: no augmentation" << std::endl;
    csv += "none,none," + summary_row(run_training(base, trials, corpus, tables, log).results) + '\n';
    for (auto d : s.augbench.domains) {
        for (auto k : s.augbench.kinds) {
            auto sub = s;
            sub.command = Command::Train;
            sub.augment = true;
            sub.augmentation.domain = d;
            sub.augmentation.noise.kind = k;
            const auto name = to_string(k) + "_" + to_string(d);
            sub.out = (std::filesystem::path(s.out) / name).string();
            if (log) *log << "augbench: " << name << std::endl;
            csv += to_string(k) + ',' + to_string(d) + ',' +
                   summary_row(run_training(sub, trials, corpus, tables, log).results) + '\n';
        }
    }
    write_text(std::filesystem::path(s.out) / "augbench.csv", csv);
    return csv;
}

/// Re-scores every checkpoint of a run directory on its recorded test
/// partition; the returned rows reproduce the run's results.csv.
inline std::vector<RunResult> rescore_run(const std::string& run_dir, std::span<const EnvelopeTrial> trials,
                                          const Corpus& corpus) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(run_dir) / "manifest.json");
    if (!in) throw Error("eval: no manifest.json in '" + run_dir + "'");
    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("eval: invalid run manifest: ") + e.what());
    }
    const auto s = spec_from_json(manifest.at("spec"));
    std::vector<RunResult> out;
    std::map<int, Job> jobs;
    for (auto& j : plan_jobs(s, trials)) jobs[j.subject] = j;
    for (const auto& e : manifest.at("runs")) {
        const int subject = e.at("subject").get<int>(), fold = e.at("fold").get<int>();
        const auto seed = e.at("seed").get<std::uint64_t>();
        std::vector<EnvelopeTrial> subset;
        std::vector<int> labels;
        const auto it = jobs.find(subject);
        if (it == jobs.end()) throw InvalidArgument("eval: dataset has no subject " + std::to_string(subject));
        for (auto i : it->second.members) {
            subset.push_back(trials[i]);
            labels.push_back(corpus.task_label(trials[i].word_id, s.task));
        }
        const auto split =
            s.cv == SplitMode::WithinSubject5Fold ? split_within(subset, fold, seed) : split_cross(subset, fold, seed);
        auto model = load_checkpoint((fs::path(run_dir) / e.at("checkpoint").get<std::string>()).string());
        auto r = score(model, subset, labels, split, model.config().n_classes);
        r.approach = to_string(s.approach);
        r.task = s.task;
        r.subject = subject;
        r.fold = fold;
        r.seed = seed;
        r.fingerprint = manifest.at("fingerprint").get<std::string>();
        out.push_back(r);
    }
    return out;
}

}  // namespace masd
