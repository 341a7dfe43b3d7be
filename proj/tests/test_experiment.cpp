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

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "masd/experiment.hpp"

namespace {

using namespace masd;
namespace fs = std::filesystem;

std::vector<EnvelopeTrial> toy_trials(int n_subjects) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::vector<EnvelopeTrial> out;
    for (int s = 0; s < n_subjects; ++s) {
        for (int b = 0; b < 15; ++b) {
            for (int w = 0; w < 48; ++w) {
                EnvelopeTrial t{MatrixD(4, 32), w, b, s};
                for (double& v : t.data.data()) v = g(rng);
                t.data(w % 4, w % 32) += 3.0;
                out.push_back(std::move(t));
            }
        }
    }
    return out;
}

ExperimentSpec tiny_spec(const fs::path& out) {
    ExperimentSpec s;
    s.out = out.string();
    s.dataset = "unused";
    s.repeats = 2;
    s.folds = {1};
    s.model.temporal_kernel = 5;
    s.model.n_temporal_filters = 2;
    s.model.separable_kernel = 4;
    s.model.pool1 = 2;
    s.model.pool2 = 4;
    s.model.branch_dim_t = s.model.branch_dim_s = 8;
    s.train.max_epochs = 2;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class ExperimentTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() / ("masd_exp_" + std::to_string(::getpid()));
        fs::remove_all(root_);
    }
    void TearDown() override { fs::remove_all(root_); }
    fs::path root_;
};

TEST(Spec, JsonRoundTrip) {
    ExperimentSpec s;
    s.command = Command::Sweep;
    s.approach = Approach::Masd;
    s.text_emb = "t.json";
    s.task = TaskKind::Initial8;
    s.folds = {0, 2};
    s.train.loss.tau = 0.05;
    s.augment = true;
    s.augmentation.noise.kind = NoiseKind::Pink;
    s.synth.pseudo_cluster.reset();
    const auto doc = to_json(s);
    const auto back = spec_from_json(doc);
    EXPECT_EQ(to_json(back), doc);
    EXPECT_EQ(spec_fingerprint(back), spec_fingerprint(s));
    s.seed = 1;
    EXPECT_NE(spec_fingerprint(back), spec_fingerprint(s));
}

TEST(Spec, OverridesAndMerging) {
    auto doc = to_json(ExperimentSpec{});
    apply_override(doc, "loss.tau=0.5");
    apply_override(doc, "folds=[1,3]");
    apply_override(doc, "out=runs/a=b");
    apply_override(doc, "noise.kind=pink");
    const auto s = spec_from_json(doc);
    EXPECT_EQ(s.train.loss.tau, 0.5);
    EXPECT_EQ(s.folds, (std::vector<int>{1, 3}));
    EXPECT_EQ(s.out, "runs/a=b");
    EXPECT_EQ(s.augmentation.noise.kind, NoiseKind::Pink);

    EXPECT_THROW(apply_override(doc, "loss.tua=1"), InvalidArgument);
    EXPECT_THROW(apply_override(doc, "loss=1"), InvalidArgument);
    EXPECT_THROW(apply_override(doc, "repeats=many"), InvalidArgument);
    EXPECT_THROW(apply_override(doc, "repeats"), InvalidArgument);
    apply_override(doc, "task=vowel");
    EXPECT_THROW(spec_from_json(doc), InvalidArgument);

    auto base = to_json(ExperimentSpec{});
    merge_json(base, nlohmann::ordered_json::parse(R"({"loss": {"lambda_t": 0.1}, "repeats": 3})"));
    EXPECT_EQ(spec_from_json(base).train.loss.lambda_t, 0.1);
    EXPECT_EQ(spec_from_json(base).train.loss.tau, 0.01);
    EXPECT_THROW(merge_json(base, nlohmann::ordered_json::parse(R"({"los": {}})")), InvalidArgument);

    apply_quick_preset(base);
    EXPECT_EQ(spec_from_json(base).repeats, 3);
    EXPECT_EQ(spec_from_json(base).folds, std::vector<int>{0});
}

TEST(Spec, ValidationNamesFields) {
    ExperimentSpec s;
    s.dataset = "d";
    EXPECT_TRUE(validate(s).empty());

    auto bad = s;
    bad.train.loss.tau = 0.0;
    ASSERT_EQ(validate(bad).size(), 1u);
    EXPECT_EQ(validate(bad)[0], "loss.tau must be > 0");

    bad = s;
    bad.approach = Approach::Masd;
    ASSERT_EQ(validate(bad).size(), 1u);
    EXPECT_EQ(validate(bad)[0], "approach masd requires text_emb or speech_emb");
    bad.speech_emb = "s.json";
    EXPECT_TRUE(validate(bad).empty());

    bad = s;
    bad.text_emb = "t.json";
    EXPECT_EQ(validate(bad).at(0), "approach single must not set text_emb or speech_emb");

    bad = s;
    bad.augmentation.noise.p_s = 0.6;
    bad.augmentation.noise.p_p = 0.6;
    EXPECT_EQ(validate(bad).at(0), "noise.p_s + p_p must be <= 1");

    bad = s;
    bad.dataset.clear();
    EXPECT_EQ(validate(bad).at(0), "dataset is required for train");
    bad.command = Command::Synth;
    EXPECT_TRUE(validate(bad).empty());

    bad = s;
    bad.command = Command::Sweep;
    EXPECT_EQ(validate(bad).at(0), "sweep requires approach masd");
    bad.folds = {5};
    EXPECT_EQ(validate(bad).size(), 2u);
}

TEST(Spec, SingleApproachDropsAlignmentWeights) {
    ExperimentSpec s;
    s.train.loss.lambda_t = 3.0;
    EXPECT_EQ(train_config_for(s, 1).loss.lambda_t, 0.0);
    s.approach = Approach::Masd;
    EXPECT_EQ(train_config_for(s, 1).loss.lambda_t, 3.0);
    EXPECT_FALSE(train_config_for(s, 1).augmentation.has_value());
    s.augment = true;
    EXPECT_TRUE(train_config_for(s, 1).augmentation.has_value());
}

TEST(Spec, BranchWidthsFollowTables) {
    const auto corpus = Corpus::bundled();
    PseudoEmbeddingConfig pc;
    pc.dim = 12;
    Tables t;
    t.speech = pseudo_embeddings(Modality::Speech, corpus, pc);
    ExperimentSpec s;
    s.task = TaskKind::Tone;
    const auto m = model_config_for(s, corpus, 16, 320, t);
    EXPECT_EQ(m.branch_dim_s, 12);
    EXPECT_EQ(m.branch_dim_t, s.model.branch_dim_t);
    EXPECT_EQ(m.n_classes, 4);
    EXPECT_EQ(m.channels, 16);
}

TEST(Jobs, WithinAndCrossPlans) {
    const auto trials = toy_trials(3);
    ExperimentSpec s;
    auto jobs = plan_jobs(s, trials);
    ASSERT_EQ(jobs.size(), 15u);
    EXPECT_EQ(jobs[7].subject, 1);
    EXPECT_EQ(jobs[7].fold, 2);
    EXPECT_EQ(jobs[7].members.size(), 720u);
    s.cv = SplitMode::LeaveOneSubjectOut;
    s.subjects = {0, 2};
    jobs = plan_jobs(s, trials);
    ASSERT_EQ(jobs.size(), 2u);
    EXPECT_EQ(jobs[1].fold, 2);
    EXPECT_EQ(jobs[1].members.size(), 1440u);
    s.subjects = {4};
    EXPECT_THROW(plan_jobs(s, trials), InvalidArgument);
}

TEST_F(ExperimentTest, RunIsReproducibleAndRescorable) {
    const auto trials = toy_trials(1);
    const auto corpus = Corpus::bundled();
    auto s = tiny_spec(root_ / "a");
    const auto run = run_training(s, trials, corpus, {});
    ASSERT_EQ(run.results.size(), 2u);
    EXPECT_EQ(run.results[0].fold, 1);
    EXPECT_NE(run.results[0].seed, run.results[1].seed);
    s.out = (root_ / "b").string();
    run_training(s, trials, corpus, {});
    const auto a = slurp(root_ / "a" / "results.csv");
    EXPECT_EQ(a, slurp(root_ / "b" / "results.csv"));
    EXPECT_EQ(a.substr(0, a.find('\n')), kResultsHeader);

    // Every artifact in the manifest exists; the spec inside it reproduces the fingerprint.
    std::ifstream in(root_ / "a" / "manifest.json");
    const auto manifest = nlohmann::ordered_json::parse(in);
    for (const auto& f : manifest["artifacts"]) EXPECT_TRUE(fs::exists(root_ / "a" / f.get<std::string>()));
    EXPECT_EQ(manifest["fingerprint"], spec_fingerprint(spec_from_json(manifest["spec"])));
    EXPECT_EQ(manifest["runs"].size(), 2u);

    EXPECT_EQ(results_csv(rescore_run((root_ / "a").string(), trials, corpus)), a);
}

TEST_F(ExperimentTest, SweepWritesOneRowPerValue) {
    const auto trials = toy_trials(1);
    const auto corpus = Corpus::bundled();
    PseudoEmbeddingConfig pc;
    pc.dim = 8;
    Tables t;
    t.text = pseudo_embeddings(Modality::Text, corpus, pc);
    auto s = tiny_spec(root_);
    s.command = Command::Sweep;
    s.approach = Approach::Masd;
    s.text_emb = "given";
    s.repeats = 1;
    s.train.max_epochs = 1;
    const auto csv = run_sweep(s, trials, corpus, t);
    std::istringstream lines(csv);
    std::vector<std::string> rows;
    for (std::string l; std::getline(lines, l);) rows.push_back(l);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], std::string("parameter,value,") + kSummaryColumns);
    EXPECT_EQ(rows[1].substr(0, 11), "lambda_t,0,");
    EXPECT_EQ(rows[4].substr(0, 12), "lambda_t,10,");
    EXPECT_TRUE(fs::exists(root_ / "lambda_t_0.1" / "results.csv"));
    EXPECT_EQ(slurp(root_ / "sweep.csv"), csv);
}

TEST_F(ExperimentTest, AugBenchCoversEveryConfiguration) {
    const auto trials = toy_trials(1);
    auto s = tiny_spec(root_);
    s.command = Command::AugBench;
    s.repeats = 1;
    s.train.max_epochs = 1;
    s.augbench.kinds = {NoiseKind::SaltPepper, NoiseKind::Gaussian};
    s.augbench.domains = {NoiseDomain::Time};
    const auto csv = run_augbench(s, trials, Corpus::bundled(), {});
    EXPECT_NE(csv.find("\nnone,none,1,"), std::string::npos);
    EXPECT_NE(csv.find("\nsaltpepper,time,1,"), std::string::npos);
    EXPECT_NE(csv.find("\ngaussian,time,1,"), std::string::npos);
}

TEST_F(ExperimentTest, EnvelopeDatasetsRoundTrip) {
    const auto trials = toy_trials(1);
    write_dataset(envelope_dataset(trials, 200.0), root_.string());
    const auto ds = read_dataset(root_.string());
    EXPECT_EQ(ds.kind, "envelope");
    const auto back = load_envelopes(ds);
    ASSERT_EQ(back.size(), trials.size());
    for (std::size_t i = 0; i < trials.size(); i += 97) {
        EXPECT_EQ(back[i].word_id, trials[i].word_id);
        for (std::size_t k = 0; k < back[i].data.size(); ++k) {
            EXPECT_EQ(back[i].data.data()[k], static_cast<double>(static_cast<float>(trials[i].data.data()[k])));
        }
    }
}

}  // namespace
