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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/common.hpp"
#include "masd/corpus.hpp"
#include "masd/dsp.hpp"
#include "masd/modality.hpp"
#include "masd/trainer.hpp"

namespace masd {

enum class TemplateMode { Separable, ClassStructured, RandomLabel };

inline std::string to_string(TemplateMode m) {
    switch (m) {
        case TemplateMode::Separable: return "separable";
        case TemplateMode::ClassStructured: return "class_structured";
        case TemplateMode::RandomLabel: return "random_label";
    }
    return "unknown";
}

inline TemplateMode parse_template_mode(std::string_view s) {
    if (s == "separable") return TemplateMode::Separable;
    if (s == "class_structured" || s == "classstructured") return TemplateMode::ClassStructured;
    if (s == "random_label" || s == "randomlabel") return TemplateMode::RandomLabel;
    throw InvalidArgument("unknown template mode '" + std::string(s) + "'");
}

struct SynthConfig {
    int n_subjects = 1;
    int n_blocks = 15;
    int words_per_block = kNumWords;
    int channels = 64;
    double fs_raw = 1000.0;
    double trial_secs = 1.6;
    double snr_db = 0.0;
    TemplateMode template_mode = TemplateMode::Separable;
    /// 0 = loadings independent of the embeddings, 1 = loadings fully
    /// determined by them.
    double embedding_coupling = 0.0;
    /// Fraction of template energy that differs between words; the rest is
    /// an evoked response shared by all words.
    double specificity = 0.015;
    /// Strength of the per-subject channel rotation; 0 gives identical subjects.
    double subject_variability = 1.0;
    std::uint64_t seed = 1;

    int samples() const { return static_cast<int>(std::lround(trial_secs * fs_raw)); }
};

inline std::vector<std::string> validate(const SynthConfig& c, const std::string& prefix = "synth") {
    std::vector<std::string> out;
    if (c.n_subjects < 1) out.push_back(prefix + ".n_subjects must be >= 1");
    if (c.n_blocks < 1) out.push_back(prefix + ".n_blocks must be >= 1");
    if (c.words_per_block != kNumWords) out.push_back(prefix + ".words_per_block must be 48");
    if (c.channels < 2) out.push_back(prefix + ".channels must be >= 2");
    if (!(c.fs_raw > 340.0)) out.push_back(prefix + ".fs_raw must be > 340");
    if (!(c.trial_secs > 0.0)) out.push_back(prefix + ".trial_secs must be > 0");
    if (!std::isfinite(c.snr_db)) out.push_back(prefix + ".snr_db must be finite");
    if (!(c.embedding_coupling >= 0.0 && c.embedding_coupling <= 1.0)) {
        out.push_back(prefix + ".embedding_coupling must lie in [0, 1]");
    }
    if (!(c.specificity > 0.0 && c.specificity <= 1.0)) out.push_back(prefix + ".specificity must lie in (0, 1]");
    if (!(c.subject_variability >= 0.0)) out.push_back(prefix + ".subject_variability must be >= 0");
    return out;
}

/// Raw trials of all subjects plus the shared recording geometry.
struct Dataset {
    /// "raw" for sensor recordings, "envelope" for preprocessed trials.
    std::string kind = "raw";
    double fs = 1000.0;
    std::size_t channels = 0;
    std::size_t samples = 0;
    std::vector<RawTrial> trials;

    std::vector<int> subjects() const {
        std::vector<int> ids;
        for (const auto& t : trials) {
            if (std::find(ids.begin(), ids.end(), t.subject) == ids.end()) ids.push_back(t.subject);
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }
};

namespace detail {

// Q from the QR factorization of `a` (rows x cols, rows >= cols) by modified
// Gram-Schmidt; columns come out orthonormal.
inline MatrixD orthonormal_columns(MatrixD a) {
    const std::size_t r = a.rows(), c = a.cols();
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < r; ++i) dot += a(i, j) * a(i, k);
            for (std::size_t i = 0; i < r; ++i) a(i, j) -= dot * a(i, k);
        }
        double n = 0.0;
        for (std::size_t i = 0; i < r; ++i) n += a(i, j) * a(i, j);
        n = std::sqrt(n);
        for (std::size_t i = 0; i < r; ++i) a(i, j) /= n;
    }
    return a;
}

inline MatrixD gaussian_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    MatrixD m(r, c);
    for (double& v : m.data()) v = g(rng);
    return m;
}

inline std::vector<double> unit_gaussian(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    normalize_in_place(v);
    return v;
}

}  // namespace detail

/// One Gabor atom: a Gaussian-windowed carrier.
struct Atom {
    double centre = 0.8;  // s
    double width = 0.08;  // s, Gaussian standard deviation
    double freq = 120.0;  // Hz
    double phase = 0.0;
};

/// The noise-free generative model: per-word atoms with channel loadings,
/// and one orthogonal channel mixing per subject.
class SynthModel {
public:
    static constexpr int kAtoms = 3;

    SynthModel(const SynthConfig& cfg, const Corpus& corpus, const std::vector<const EmbeddingTable*>& tables = {})
        : cfg_(cfg) {
        if (const auto v = validate(cfg); !v.empty()) throw InvalidArgument(v.front());
        if (cfg.embedding_coupling > 0.0 && tables.empty()) {
            throw InvalidArgument("synth: embedding_coupling > 0 requires an embedding table");
        }
        const auto c = static_cast<std::size_t>(cfg.channels);
        std::mt19937_64 rng(derive_seed(cfg.seed, 1));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double dur = cfg.trial_secs;

        // Shared atom timings used by the class-structured templates; spaced
        // so that atoms barely overlap in time.
        std::vector<Atom> shared(kAtoms);
        for (int a = 0; a < kAtoms; ++a) {
            shared[static_cast<std::size_t>(a)] = {dur * (0.25 + 0.25 * a), dur * 0.05, 90.0 + 25.0 * a,
                                                   2 * std::numbers::pi * u(rng)};
        }
        // Class prototypes per atom: tone, place of articulation, final class.
        const TaskKind atom_task[kAtoms] = {TaskKind::Tone, TaskKind::Initial8, TaskKind::FinalClass};
        std::vector<std::vector<std::vector<double>>> prototypes(kAtoms);
        for (int a = 0; a < kAtoms; ++a) {
            for (int k = 0; k < corpus.n_classes(atom_task[a]); ++k) {
                prototypes[static_cast<std::size_t>(a)].push_back(detail::unit_gaussian(c, rng));
            }
        }
        // Embedding maps: one orthonormal projection per atom.
        std::vector<MatrixD> maps;
        for (int a = 0; a < kAtoms && !tables.empty(); ++a) {
            const auto* t = tables[static_cast<std::size_t>(a) % tables.size()];
            const auto d = static_cast<std::size_t>(t->dim);
            if (d <= c) {
                maps.push_back(detail::orthonormal_columns(detail::gaussian_matrix(c, d, rng)));
            } else {
                // More embedding dims than channels: orthonormal rows instead.
                auto q = detail::orthonormal_columns(detail::gaussian_matrix(d, c, rng));
                MatrixD m(c, d);
                for (std::size_t i = 0; i < c; ++i) {
                    for (std::size_t j = 0; j < d; ++j) m(i, j) = q(j, i);
                }
                maps.push_back(std::move(m));
            }
        }

        atoms_.resize(kNumWords);
        loadings_.resize(kNumWords);
        for (const auto& e : corpus.entries()) {
            const auto w = static_cast<std::size_t>(e.word_id);
            for (int a = 0; a < kAtoms; ++a) {
                Atom atom;
                std::vector<double> load;
                if (cfg.template_mode == TemplateMode::ClassStructured) {
                    atom = shared[static_cast<std::size_t>(a)];
                    const auto& proto = prototypes[static_cast<std::size_t>(a)]
                                                  [static_cast<std::size_t>(corpus.task_label(e, atom_task[a]))];
                    const auto own = detail::unit_gaussian(c, rng);
                    load.resize(c);
                    for (std::size_t i = 0; i < c; ++i) load[i] = proto[i] + 0.5 * own[i];
                    normalize_in_place(load);
                } else {
                    atom = {dur * (0.15 + 0.7 * u(rng)), dur * (0.03 + 0.04 * u(rng)), 80.0 + 80.0 * u(rng),
                            2 * std::numbers::pi * u(rng)};
                    load = detail::unit_gaussian(c, rng);
                }
                if (cfg.embedding_coupling > 0.0) {
                    const auto* t = tables[static_cast<std::size_t>(a) % tables.size()];
                    const auto& ev = t->at(e.word_id);
                    const auto& q = maps[static_cast<std::size_t>(a)];
                    std::vector<double> coupled(c, 0.0);
                    for (std::size_t i = 0; i < c; ++i) {
                        for (std::size_t j = 0; j < ev.size(); ++j) coupled[i] += q(i, j) * ev[j];
                    }
                    normalize_in_place(coupled);
                    const double k = cfg.embedding_coupling;
                    for (std::size_t i = 0; i < c; ++i) {
                        load[i] = std::sqrt(1.0 - k) * load[i] + std::sqrt(k) * coupled[i];
                    }
                }
                atoms_[w].push_back(atom);
                loadings_[w].push_back(std::move(load));
            }
        }

        for (int a = 0; a < kAtoms; ++a) {
            common_atoms_.push_back({dur * (0.2 + 0.3 * a), dur * 0.06, 100.0 + 20.0 * a, 2 * std::numbers::pi * u(rng)});
            common_loadings_.push_back(detail::unit_gaussian(c, rng));
        }

        for (int s = 0; s < cfg.n_subjects; ++s) {
            std::mt19937_64 srng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(s)));
            auto g = detail::gaussian_matrix(c, c, srng);
            const double v = cfg.subject_variability / std::sqrt(static_cast<double>(c));
            for (std::size_t i = 0; i < c; ++i) {
                for (std::size_t j = 0; j < c; ++j) g(i, j) = (i == j ? 1.0 : 0.0) + v * g(i, j);
            }
            rotations_.push_back(detail::orthonormal_columns(std::move(g)));
        }
    }

    const SynthConfig& config() const noexcept { return cfg_; }

    /// Unrotated template of one word, channels x samples: the shared evoked
    /// part and the word-specific part, each scaled to its energy share.
    MatrixD word_template(int word_id) const {
        const auto w = static_cast<std::size_t>(word_id);
        auto x = render(atoms_[w], loadings_[w]);
        const double ws = std::sqrt(cfg_.specificity / energy(x));
        if (cfg_.specificity >= 1.0) {
            for (double& v : x.data()) v *= ws;
            return x;
        }
        const auto common = render(common_atoms_, common_loadings_);
        const double cs = std::sqrt((1.0 - cfg_.specificity) / energy(common));
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = ws * x.data()[i] + cs * common.data()[i];
        return x;
    }

    /// The clean signal of `word_id` as recorded from `subject`.
    MatrixD clean(int subject, int word_id) const {
        const auto t = word_template(word_id);
        const auto& r = rotations_.at(static_cast<std::size_t>(subject));
        MatrixD out(t.rows(), t.cols());
        for (std::size_t i = 0; i < r.rows(); ++i) {
            for (std::size_t k = 0; k < r.cols(); ++k) {
                const double w = r(i, k);
                const auto src = t.row(k);
                auto dst = out.row(i);
                for (std::size_t j = 0; j < src.size(); ++j) dst[j] += w * src[j];
            }
        }
        return out;
    }

    const std::vector<std::vector<double>>& loadings(int word_id) const {
        return loadings_.at(static_cast<std::size_t>(word_id));
    }

private:
    static double energy(const MatrixD& m) {
        double e = 0.0;
        for (double v : m.data()) e += v * v;
        return e;
    }

    MatrixD render(const std::vector<Atom>& atoms, const std::vector<std::vector<double>>& loadings) const {
        const auto c = static_cast<std::size_t>(cfg_.channels);
        const auto n = static_cast<std::size_t>(cfg_.samples());
        MatrixD x(c, n);
        std::vector<double> wave(n);
        for (std::size_t a = 0; a < atoms.size(); ++a) {
            const auto& at = atoms[a];
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / cfg_.fs_raw;
                const double z = (t - at.centre) / at.width;
                wave[i] = std::exp(-0.5 * z * z) * std::cos(2 * std::numbers::pi * at.freq * t + at.phase);
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double l = loadings[a][ch];
                for (std::size_t i = 0; i < n; ++i) x(ch, i) += l * wave[i];
            }
        }
        return x;
    }

    SynthConfig cfg_;
    std::vector<Atom> common_atoms_;
    std::vector<std::vector<double>> common_loadings_;
    std::vector<std::vector<Atom>> atoms_;
    std::vector<std::vector<std::vector<double>>> loadings_;
    std::vector<MatrixD> rotations_;
};

/// Synthetic dataset: every block presents the 48 words once in a seeded
/// order; each trial is its subject's clean template plus white Gaussian
/// noise whose energy sits `snr_db` below the template energy.
inline Dataset generate(const SynthConfig& cfg, const Corpus& corpus,
                        const std::vector<const EmbeddingTable*>& tables = {}) {
    SynthModel model(cfg, corpus, tables);
    Dataset ds;
    ds.fs = cfg.fs_raw;
    ds.channels = static_cast<std::size_t>(cfg.channels);
    ds.samples = static_cast<std::size_t>(cfg.samples());
    const double noise_ratio = std::pow(10.0, -cfg.snr_db / 10.0);
    for (int s = 0; s < cfg.n_subjects; ++s) {
        std::vector<MatrixD> clean;
        std::vector<double> sd;
        for (int w = 0; w < kNumWords; ++w) {
            clean.push_back(model.clean(s, w));
            double e = 0.0;
            for (double v : clean.back().data()) e += v * v;
            sd.push_back(std::sqrt(e * noise_ratio / static_cast<double>(clean.back().size())));
        }
        std::mt19937_64 rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(s)));
        std::normal_distribution<double> g;
        std::vector<std::size_t> first_trial_of_subject{ds.trials.size()};
        for (int b = 0; b < cfg.n_blocks; ++b) {
            std::vector<int> order(kNumWords);
            for (int w = 0; w < kNumWords; ++w) order[static_cast<std::size_t>(w)] = w;
            seeded_shuffle(order, rng());
            for (int w : order) {
                RawTrial t;
                t.fs = cfg.fs_raw;
                t.word_id = w;
                t.block = b;
                t.subject = s;
                const auto& x = clean[static_cast<std::size_t>(w)];
                t.data = MatrixF(x.rows(), x.cols());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    t.data.data()[i] = static_cast<float>(x.data()[i] + sd[static_cast<std::size_t>(w)] * g(rng));
                }
                ds.trials.push_back(std::move(t));
            }
        }
        if (cfg.template_mode == TemplateMode::RandomLabel) {
            // Reassign labels by a permutation within each block. The
            // label-signal link is cut while every block still holds each
            // word once, so block-wise splits keep balanced classes and the
            // training label frequencies say nothing about the test set.
            const std::size_t begin = first_trial_of_subject[0];
            std::mt19937_64 label_rng(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(s)));
            for (std::size_t i = begin; i < ds.trials.size(); i += kNumWords) {
                std::vector<int> labels;
                for (std::size_t j = i; j < i + kNumWords; ++j) labels.push_back(ds.trials[j].word_id);
                seeded_shuffle(labels, label_rng());
                for (std::size_t j = i; j < i + kNumWords; ++j) ds.trials[j].word_id = labels[j - i];
            }
        }
    }
    return ds;
}

/// Preprocesses every trial of a dataset.
inline std::vector<EnvelopeTrial> preprocess_all(const Dataset& ds, const PreprocessConfig& cfg = {}) {
    std::vector<EnvelopeTrial> out;
    out.reserve(ds.trials.size());
    for (const auto& t : ds.trials) out.push_back(preprocess(t, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json plus per-subject little-endian payloads.

inline constexpr int kDatasetVersion = 1;

namespace detail {

inline void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("dataset: cannot write '" + p.string() + "'");
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw Error("dataset: write failed for '" + p.string() + "'");
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw FormatError("dataset: missing file '" + p.string() + "'");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["version"] = kDatasetVersion;
    manifest["kind"] = ds.kind;
    manifest["fs"] = ds.fs;
    manifest["channels"] = ds.channels;
    manifest["samples"] = ds.samples;
    manifest["subjects"] = nlohmann::ordered_json::array();
    for (int s : ds.subjects()) {
        std::vector<float> values;
        std::vector<std::uint16_t> labels, blocks;
        for (const auto& t : ds.trials) {
            if (t.subject != s) continue;
            if (t.data.rows() != ds.channels || t.data.cols() != ds.samples) {
                throw InvalidArgument("write_dataset: trial shape differs from dataset geometry");
            }
            values.insert(values.end(), t.data.data().begin(), t.data.data().end());
            labels.push_back(static_cast<std::uint16_t>(t.word_id));
            blocks.push_back(static_cast<std::uint16_t>(t.block));
        }
        const std::string stem = "subject_" + std::to_string(s);
        nlohmann::ordered_json files;
        files["trials"] = stem + "_trials.f32";
        files["labels"] = stem + "_labels.u16";
        files["blocks"] = stem + "_blocks.u16";
        detail::write_bytes(fs::path(dir) / files["trials"].get<std::string>(), values.data(), values.size() * 4);
        detail::write_bytes(fs::path(dir) / files["labels"].get<std::string>(), labels.data(), labels.size() * 2);
        detail::write_bytes(fs::path(dir) / files["blocks"].get<std::string>(), blocks.data(), blocks.size() * 2);
        nlohmann::ordered_json entry;
        entry["id"] = s;
        entry["n_trials"] = labels.size();
        entry["files"] = std::move(files);
        manifest["subjects"].push_back(std::move(entry));
    }
    std::ofstream(std::filesystem::path(dir) / "manifest.json") << manifest.dump(2) << '\n';
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto text = detail::read_bytes(fs::path(dir) / "manifest.json");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: invalid manifest: ") + e.what());
    }
    if (!m.contains("version")) throw FormatError("dataset: manifest has no version");
    if (m["version"] != kDatasetVersion) {
        throw FormatError("dataset: unsupported version " + m["version"].dump());
    }
    Dataset ds;
    try {
        ds.kind = m.value("kind", std::string("raw"));
        if (ds.kind != "raw" && ds.kind != "envelope") throw FormatError("dataset: unknown kind '" + ds.kind + "'");
        ds.fs = m.at("fs").get<double>();
        ds.channels = m.at("channels").get<std::size_t>();
        ds.samples = m.at("samples").get<std::size_t>();
        for (const auto& s : m.at("subjects")) {
            const int id = s.at("id").get<int>();
            const auto n = s.at("n_trials").get<std::size_t>();
            const auto& files = s.at("files");
            const auto values = detail::read_bytes(fs::path(dir) / files.at("trials").get<std::string>());
            const auto labels = detail::read_bytes(fs::path(dir) / files.at("labels").get<std::string>());
            const auto blocks = detail::read_bytes(fs::path(dir) / files.at("blocks").get<std::string>());
            const std::size_t per_trial = ds.channels * ds.samples;
            if (values.size() != n * per_trial * 4 || labels.size() != n * 2 || blocks.size() != n * 2) {
                throw FormatError("dataset: subject " + std::to_string(id) + " payload size disagrees with manifest (" +
                                  std::to_string(n) + " trials)");
            }
            for (std::size_t i = 0; i < n; ++i) {
                RawTrial t;
                t.fs = ds.fs;
                t.subject = id;
                std::uint16_t w, b;
                std::memcpy(&w, labels.data() + 2 * i, 2);
                std::memcpy(&b, blocks.data() + 2 * i, 2);
                if (w >= kNumWords) throw FormatError("dataset: label " + std::to_string(w) + " out of range");
                t.word_id = w;
                t.block = b;
                t.data = MatrixF(ds.channels, ds.samples);
                std::memcpy(t.data.data().data(), values.data() + i * per_trial * 4, per_trial * 4);
                ds.trials.push_back(std::move(t));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: malformed manifest: ") + e.what());
    }
    return ds;
}

/// Stores preprocessed trials in the dataset container (values narrowed to float).
inline Dataset envelope_dataset(std::span<const EnvelopeTrial> trials, double fs) {
    if (trials.empty()) throw InvalidArgument("envelope_dataset: no trials");
    Dataset ds;
    ds.kind = "envelope";
    ds.fs = fs;
    ds.channels = trials[0].data.rows();
    ds.samples = trials[0].data.cols();
    for (const auto& e : trials) {
        RawTrial t;
        t.fs = fs;
        t.word_id = e.word_id;
        t.block = e.block;
        t.subject = e.subject;
        t.data = MatrixF(e.data.rows(), e.data.cols());
        for (std::size_t i = 0; i < e.data.size(); ++i) t.data.data()[i] = static_cast<float>(e.data.data()[i]);
        ds.trials.push_back(std::move(t));
    }
    return ds;
}

/// Model inputs for a dataset: raw recordings are preprocessed, stored
/// envelopes are widened back to double.
inline std::vector<EnvelopeTrial> load_envelopes(const Dataset& ds, const PreprocessConfig& cfg = {}) {
    if (ds.kind == "raw") return preprocess_all(ds, cfg);
    std::vector<EnvelopeTrial> out;
    out.reserve(ds.trials.size());
    for (const auto& t : ds.trials) {
        EnvelopeTrial e{MatrixD(t.data.rows(), t.data.cols()), t.word_id, t.block, t.subject};
        for (std::size_t i = 0; i < t.data.size(); ++i) e.data.data()[i] = t.data.data()[i];
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace masd
