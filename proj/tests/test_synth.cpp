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

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "masd/synth.hpp"

namespace {

using namespace masd;
namespace fs = std::filesystem;

SynthConfig small_config(TemplateMode mode, double snr_db, int channels = 16) {
    SynthConfig c;
    c.channels = channels;
    c.snr_db = snr_db;
    c.template_mode = mode;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("masd_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = mean(a), mb = mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) { return pearson(ranks(a), ranks(b)); }

RawTrial as_raw(const MatrixD& x, double fs) {
    RawTrial t;
    t.fs = fs;
    t.data = MatrixF(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) t.data.data()[i] = static_cast<float>(x.data()[i]);
    return t;
}

// Nearest preprocessed clean template, by squared distance.
std::vector<int> oracle_predictions(const SynthModel& model, const Dataset& ds) {
    std::vector<MatrixD> templates;
    for (int w = 0; w < kNumWords; ++w) templates.push_back(preprocess(as_raw(model.clean(0, w), ds.fs)).data);
    std::vector<int> out;
    for (const auto& t : ds.trials) {
        const auto env = preprocess(t).data;
        double best = std::numeric_limits<double>::infinity();
        int arg = -1;
        for (int w = 0; w < kNumWords; ++w) {
            double d = 0.0;
            for (std::size_t i = 0; i < env.size(); ++i) {
                const double e = env.data()[i] - templates[static_cast<std::size_t>(w)].data()[i];
                d += e * e;
            }
            if (d < best) best = d, arg = w;
        }
        out.push_back(arg);
    }
    return out;
}

TEST(SynthConfig, Validation) {
    SynthConfig c;
    EXPECT_TRUE(validate(c).empty());
    c.snr_db = std::numeric_limits<double>::infinity();
    c.embedding_coupling = 1.5;
    c.specificity = 0.0;
    const auto v = validate(c);
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0], "synth.snr_db must be finite");
    EXPECT_EQ(parse_template_mode("class_structured"), TemplateMode::ClassStructured);
    EXPECT_THROW(parse_template_mode("other"), InvalidArgument);
    c = SynthConfig{};
    c.embedding_coupling = 0.5;
    EXPECT_THROW(generate(c, Corpus::bundled()), InvalidArgument);
}

TEST(Generate, TrialCountsAndBlocks) {
    const auto ds = generate(SynthConfig{}, Corpus::bundled());
    ASSERT_EQ(ds.trials.size(), 720u);
    EXPECT_EQ(ds.channels, 64u);
    EXPECT_EQ(ds.samples, 1600u);
    std::vector<int> per_word(kNumWords, 0);
    for (std::size_t i = 0; i < ds.trials.size(); ++i) {
        ++per_word[static_cast<std::size_t>(ds.trials[i].word_id)];
        EXPECT_EQ(ds.trials[i].block, static_cast<int>(i / 48));
    }
    for (int n : per_word) EXPECT_EQ(n, 15);
}

TEST(Generate, DeterministicPerSeed) {
    auto cfg = small_config(TemplateMode::Separable, 0.0, 4);
    cfg.n_subjects = 2;
    const auto a = generate(cfg, Corpus::bundled()), b = generate(cfg, Corpus::bundled());
    ASSERT_EQ(a.trials.size(), 1440u);
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
        ASSERT_EQ(a.trials[i].data, b.trials[i].data);
        ASSERT_EQ(a.trials[i].word_id, b.trials[i].word_id);
    }
    cfg.seed = 2;
    EXPECT_NE(generate(cfg, Corpus::bundled()).trials[0].data, a.trials[0].data);
}

TEST(Generate, EnergySnrMatchesRequest) {
    for (double snr : {-5.0, 0.0, 20.0}) {
        const auto cfg = small_config(TemplateMode::ClassStructured, snr);
        const SynthModel model(cfg, Corpus::bundled());
        const auto ds = generate(cfg, Corpus::bundled());
        double signal = 0.0, noise = 0.0;
        for (const auto& t : ds.trials) {
            const auto clean = model.clean(t.subject, t.word_id);
            for (std::size_t i = 0; i < clean.size(); ++i) {
                signal += clean.data()[i] * clean.data()[i];
                const double e = t.data.data()[i] - clean.data()[i];
                noise += e * e;
            }
        }
        EXPECT_NEAR(10.0 * std::log10(signal / noise), snr, 0.5);
    }
}

TEST(Generate, SubjectsDifferByRotation) {
    auto cfg = small_config(TemplateMode::Separable, 0.0, 8);
    cfg.n_subjects = 2;
    const SynthModel model(cfg, Corpus::bundled());
    const auto a = model.clean(0, 5), b = model.clean(1, 5);
    EXPECT_NE(a, b);
    // An orthogonal channel mixing preserves the template energy.
    double ea = 0, eb = 0;
    for (double v : a.data()) ea += v * v;
    for (double v : b.data()) eb += v * v;
    EXPECT_NEAR(ea, eb, 1e-9 * ea);

    cfg.subject_variability = 0.0;
    const SynthModel same(cfg, Corpus::bundled());
    EXPECT_EQ(same.clean(0, 5), same.clean(1, 5));
}

TEST(Generate, CoupledTemplatesFollowEmbeddingGeometry) {
    const auto corpus = Corpus::bundled();
    PseudoEmbeddingConfig pc;
    const auto table = pseudo_embeddings(Modality::Text, corpus, pc);
    auto cfg = small_config(TemplateMode::ClassStructured, 0.0, 64);
    cfg.embedding_coupling = 1.0;
    const SynthModel model(cfg, corpus, {&table});

    // Stimulus-specific part: the mean template over words is removed.
    std::vector<MatrixD> t;
    for (int w = 0; w < kNumWords; ++w) t.push_back(model.word_template(w));
    MatrixD avg(t[0].rows(), t[0].cols());
    for (const auto& m : t) {
        for (std::size_t i = 0; i < m.size(); ++i) avg.data()[i] += m.data()[i] / kNumWords;
    }
    for (auto& m : t) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] -= avg.data()[i];
    }
    std::vector<double> tc, ec;
    for (std::size_t a = 0; a < t.size(); ++a) {
        for (std::size_t b = a + 1; b < t.size(); ++b) {
            tc.push_back(pearson(t[a].data(), t[b].data()));
            ec.push_back(cosine(table.vectors[a], table.vectors[b]));
        }
    }
    EXPECT_GT(spearman(tc, ec), 0.8);
}

TEST(Generate, HighSnrOracleIsPerfect) {
    const auto cfg = small_config(TemplateMode::Separable, 40.0);
    const SynthModel model(cfg, Corpus::bundled());
    const auto ds = generate(cfg, Corpus::bundled());
    const auto pred = oracle_predictions(model, ds);
    for (std::size_t i = 0; i < pred.size(); ++i) ASSERT_EQ(pred[i], ds.trials[i].word_id);
}

TEST(Generate, RandomLabelsCarryNoInformation) {
    const auto cfg = small_config(TemplateMode::RandomLabel, 40.0);
    const SynthModel model(cfg, Corpus::bundled());
    const auto ds = generate(cfg, Corpus::bundled());
    std::vector<int> per_word(kNumWords, 0);
    for (const auto& t : ds.trials) ++per_word[static_cast<std::size_t>(t.word_id)];
    for (int n : per_word) EXPECT_EQ(n, 15);
    // Every block still presents each label exactly once.
    for (std::size_t b = 0; b < 15; ++b) {
        std::vector<int> seen(kNumWords, 0);
        for (std::size_t i = 48 * b; i < 48 * (b + 1); ++i) {
            ++seen[static_cast<std::size_t>(ds.trials[i].word_id)];
            EXPECT_EQ(ds.trials[i].block, static_cast<int>(b));
        }
        EXPECT_EQ(*std::min_element(seen.begin(), seen.end()), 1);
    }

    const auto pred = oracle_predictions(model, ds);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.trials[i].word_id;
    EXPECT_NEAR(static_cast<double>(hits) / 720.0, 1.0 / 48.0, 0.02);
}

TEST(DatasetFiles, RoundTripIsBitExact) {
    auto cfg = small_config(TemplateMode::Separable, 0.0, 4);
    cfg.n_subjects = 2;
    const auto ds = generate(cfg, Corpus::bundled());
    const auto dir = scratch_dir("roundtrip");
    write_dataset(ds, dir.string());
    const auto back = read_dataset(dir.string());
    EXPECT_EQ(back.fs, ds.fs);
    EXPECT_EQ(back.channels, ds.channels);
    EXPECT_EQ(back.samples, ds.samples);
    ASSERT_EQ(back.trials.size(), ds.trials.size());
    for (std::size_t i = 0; i < ds.trials.size(); ++i) {
        const auto& a = ds.trials[i].data.data();
        const auto& b = back.trials[i].data.data();
        ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
        ASSERT_EQ(back.trials[i].word_id, ds.trials[i].word_id);
        ASSERT_EQ(back.trials[i].block, ds.trials[i].block);
        ASSERT_EQ(back.trials[i].subject, ds.trials[i].subject);
    }
    fs::remove_all(dir);
}

TEST(DatasetFiles, Errors) {
    const auto ds = generate(small_config(TemplateMode::Separable, 0.0, 2), Corpus::bundled());
    const auto dir = scratch_dir("errors");
    write_dataset(ds, dir.string());

    // One trial short of what the manifest claims.
    const auto trials = dir / "subject_0_trials.f32";
    fs::resize_file(trials, fs::file_size(trials) - 2 * 1600 * 4);
    try {
        read_dataset(dir.string());
        FAIL() << "expected a size error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("720"), std::string::npos);
    }

    std::ifstream in(dir / "manifest.json");
    auto manifest = nlohmann::json::parse(in);
    in.close();
    manifest["version"] = "7b";
    std::ofstream(dir / "manifest.json") << manifest.dump();
    try {
        read_dataset(dir.string());
        FAIL() << "expected a version error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("7b"), std::string::npos);
    }

    fs::remove(dir / "manifest.json");
    EXPECT_THROW(read_dataset(dir.string()), FormatError);
    fs::remove_all(dir);
}

}  // namespace
