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

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "masd/corpus.hpp"

namespace {

using masd::Corpus;
using masd::TaskKind;

// The initial column of the word table, transcribed row by row.
const char* const kInitialColumn[] = {
    "p", "f", "d", "t", "t", "g", "j", "q", "ch", "sh", "r", "s",  //
    "m", "m", "n", "j", "q", "ch", "r", "z", "c", "c", "s", "-",    //
    "b", "p", "n", "l", "l", "h", "x", "zh", "z", "y", "w", "-",   //
    "b", "f", "d", "g", "k", "k", "h", "x", "zh", "sh", "y", "w"};

// The final-class column, same order.
const char* const kFinalClassColumn[] = {
    "F2", "F1", "F2", "F1", "F2", "F3", "F4", "F4", "F3", "F3", "F1", "F1",  //
    "F1", "F2", "F2", "F2", "F2", "F3", "F1", "F3", "F1", "F1", "F3", "F1",  //
    "F1", "F2", "F2", "F4", "F2", "F3", "F4", "F3", "F1", "F2", "F3", "F1",  //
    "F3", "F1", "F2", "F1", "F1", "F3", "F3", "F2", "F1", "F1", "F2", "F3"};

std::string bundled_csv_with_rows(int rows) {
    std::istringstream in(masd::kDefaultCorpusCsv);
    std::string line, out;
    std::getline(in, line);
    out = line + "\n";
    for (int i = 0; i < rows && std::getline(in, line); ++i) out += line + "\n";
    return out;
}

TEST(Corpus, BundledMatchesDataFile) {
    std::ifstream in(MASD_SOURCE_DIR "/data/corpus.csv", std::ios::binary);
    ASSERT_TRUE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    auto file = ss.str();
    std::string bundled = masd::kDefaultCorpusCsv;
    while (!file.empty() && file.back() == '\n') file.pop_back();
    while (!bundled.empty() && bundled.back() == '\n') bundled.pop_back();
    EXPECT_EQ(file, bundled);
}

TEST(Corpus, KnownRows) {
    const auto corpus = Corpus::bundled();
    ASSERT_EQ(corpus.size(), 48u);
    const auto& piao = corpus.by_id(0);
    EXPECT_EQ(piao.word, "飘");
    EXPECT_EQ(piao.tone, masd::Tone::T1);
    EXPECT_EQ(piao.initial, "p");
    EXPECT_EQ(piao.initial8, masd::Initial8::I1);
    EXPECT_EQ(piao.final, "iao");
    EXPECT_EQ(piao.final_class, masd::FinalClass::F2);

    const auto it = std::find_if(corpus.entries().begin(), corpus.entries().end(),
                                 [](const auto& e) { return e.word == "而"; });
    ASSERT_NE(it, corpus.entries().end());
    EXPECT_EQ(it->tone, masd::Tone::T2);
    EXPECT_EQ(it->initial, "-");
    EXPECT_EQ(it->initial8, masd::Initial8::I8);
    EXPECT_EQ(it->final, "er");
    EXPECT_EQ(it->final_class, masd::FinalClass::F1);
}

TEST(Corpus, TaskLabels) {
    const auto corpus = Corpus::bundled();
    const auto& piao = corpus.by_id(0);
    EXPECT_EQ(corpus.task_label(piao, TaskKind::Tone), 0);
    EXPECT_EQ(corpus.task_label(piao, TaskKind::Word), piao.word_id);
    EXPECT_EQ(corpus.task_label(piao, TaskKind::Initial8), 0);
    EXPECT_EQ(corpus.task_label(piao, TaskKind::FinalClass), 1);
    // "-" sorts before every letter.
    EXPECT_EQ(corpus.initial_tokens().front(), "-");
}

TEST(Corpus, InitialClassCountMatchesEnumeration) {
    std::set<std::string> distinct(std::begin(kInitialColumn), std::end(kInitialColumn));
    const auto corpus = Corpus::bundled();
    EXPECT_EQ(distinct.size(), 24u);
    EXPECT_EQ(corpus.n_classes(TaskKind::Initial), static_cast<int>(distinct.size()));
    for (const auto& e : corpus.entries()) {
        EXPECT_EQ(e.initial, kInitialColumn[e.word_id]) << e.word;
    }
}

TEST(Corpus, ClassCounts) {
    const auto corpus = Corpus::bundled();
    EXPECT_EQ(corpus.class_counts(TaskKind::Tone), (std::vector<int>{12, 12, 12, 12}));
    EXPECT_EQ(corpus.class_counts(TaskKind::Word), std::vector<int>(48, 1));

    std::vector<int> expected(4, 0);
    for (const char* fc : kFinalClassColumn) ++expected[static_cast<std::size_t>(fc[1] - '1')];
    EXPECT_EQ(corpus.class_counts(TaskKind::FinalClass), expected);
    EXPECT_EQ(expected, (std::vector<int>{17, 14, 13, 4}));

    for (auto task : {TaskKind::Word, TaskKind::Tone, TaskKind::Initial, TaskKind::Initial8,
                      TaskKind::FinalClass, TaskKind::Final}) {
        const auto counts = corpus.class_counts(task);
        EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), 0), 48);
        EXPECT_EQ(static_cast<int>(counts.size()), corpus.n_classes(task));
    }
}

TEST(Corpus, LabelsAreTotalAndInRange) {
    const auto corpus = Corpus::bundled();
    const auto again = Corpus::bundled();
    for (auto task : {TaskKind::Word, TaskKind::Tone, TaskKind::Initial, TaskKind::Initial8,
                      TaskKind::FinalClass, TaskKind::Final}) {
        for (const auto& e : corpus.entries()) {
            const int label = corpus.task_label(e, task);
            EXPECT_GE(label, 0);
            EXPECT_LT(label, corpus.n_classes(task));
            EXPECT_EQ(label, again.task_label(e.word_id, task));
        }
    }
}

TEST(Corpus, RejectsWrongCount) {
    try {
        Corpus::parse(bundled_csv_with_rows(47));
        FAIL() << "expected an error";
    } catch (const masd::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("entry count != 48"), std::string::npos);
    }
}

TEST(Corpus, RejectsUnknownToken) {
    auto csv = bundled_csv_with_rows(48);
    csv.replace(csv.find(",T1,"), 4, ",T5,");
    EXPECT_THROW(Corpus::parse(csv), masd::FormatError);
}

TEST(Corpus, RejectsMalformedRow) {
    auto csv = bundled_csv_with_rows(48);
    csv.replace(csv.find(",iao,F2"), 7, ",iao");
    EXPECT_THROW(Corpus::parse(csv), masd::FormatError);
}

TEST(Corpus, RejectsDuplicateWordId) {
    std::istringstream in(masd::kDefaultCorpusCsv);
    std::string line, csv = "word_id,word,tone,initial,initial8,final,final_class\n";
    std::getline(in, line);
    for (int i = 0; std::getline(in, line); ++i) csv += std::to_string(i == 5 ? 4 : i) + "," + line + "\n";
    EXPECT_THROW(Corpus::parse(csv), masd::FormatError);
}

TEST(Corpus, ExplicitIdColumnIsHonoured) {
    std::istringstream in(masd::kDefaultCorpusCsv);
    std::string line, csv = "word_id,word,tone,initial,initial8,final,final_class\n";
    std::getline(in, line);
    for (int i = 0; std::getline(in, line); ++i) csv += std::to_string(47 - i) + "," + line + "\n";
    const auto corpus = Corpus::parse(csv);
    EXPECT_EQ(corpus.by_id(47).word, "飘");
}

}  // namespace
