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
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "masd/common.hpp"
#include "masd/corpus_data.hpp"

namespace masd {

inline constexpr int kNumWords = 48;

enum class Tone { T1, T2, T3, T4 };
enum class Initial8 { I1, I2, I3, I4, I5, I6, I7, I8 };
enum class FinalClass { F1, F2, F3, F4 };

/// Classification targets over the word corpus. `Final` is the full final
/// inventory; the 4-way grouping is `FinalClass`.
enum class TaskKind { Word, Tone, Initial, Initial8, FinalClass, Final };

struct CorpusEntry {
    int word_id = 0;
    std::string word;
    Tone tone = Tone::T1;
    std::string initial;  // "-" marks the null initial
    Initial8 initial8 = Initial8::I1;
    std::string final;
    FinalClass final_class = FinalClass::F1;
};

inline std::string to_string(TaskKind task) {
    switch (task) {
        case TaskKind::Word: return "word";
        case TaskKind::Tone: return "tone";
        case TaskKind::Initial: return "initial";
        case TaskKind::Initial8: return "initial8";
        case TaskKind::FinalClass: return "finalclass";
        case TaskKind::Final: return "final";
    }
    return "unknown";
}

inline TaskKind parse_task(std::string_view s) {
    if (s == "word") return TaskKind::Word;
    if (s == "tone") return TaskKind::Tone;
    if (s == "initial") return TaskKind::Initial;
    if (s == "initial8") return TaskKind::Initial8;
    if (s == "finalclass") return TaskKind::FinalClass;
    if (s == "final") return TaskKind::Final;
    throw InvalidArgument("unknown task '" + std::string(s) + "'");
}

namespace detail {

template <typename Enum, std::size_t N>
Enum parse_token(std::string_view token, char prefix, std::string_view field) {
    if (token.size() == 2 && token[0] == prefix && token[1] >= '1' &&
        static_cast<std::size_t>(token[1] - '1') < N) {
        return static_cast<Enum>(token[1] - '1');
    }
    throw FormatError("unknown " + std::string(field) + " token '" + std::string(token) + "'");
}

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

/// The 48-word corpus plus the class vocabularies derived from it.
/// Read-only after construction.
class Corpus {
public:
    explicit Corpus(std::vector<CorpusEntry> entries) : entries_(std::move(entries)) {
        validate();
        std::vector<std::string> initials, finals;
        for (const auto& e : entries_) {
            initials.push_back(e.initial);
            finals.push_back(e.final);
        }
        initial_tokens_ = sorted_unique(std::move(initials));
        final_tokens_ = sorted_unique(std::move(finals));
    }

    /// Parses CSV text with header `word,tone,initial,initial8,final,final_class`.
    /// An optional leading `word_id` column is honoured; otherwise ids follow row order.
    static Corpus parse(std::string_view csv) {
        if (csv.starts_with("\xEF\xBB\xBF")) csv.remove_prefix(3);
        std::istringstream in{std::string(csv)};
        std::string line;
        if (!std::getline(in, line)) throw FormatError("corpus: missing header");
        const auto header = detail::split_csv_line(line);
        const std::vector<std::string> expected{"word", "tone", "initial", "initial8", "final",
                                                "final_class"};
        bool has_id = false;
        if (header.size() == 7 && header[0] == "word_id" &&
            std::equal(expected.begin(), expected.end(), header.begin() + 1)) {
            has_id = true;
        } else if (header != expected) {
            throw FormatError("corpus: unexpected header '" + detail::trim(line) + "'");
        }

        std::vector<CorpusEntry> entries;
        int row = 0;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            ++row;
            auto f = detail::split_csv_line(line);
            if (f.size() != header.size()) {
                throw FormatError("corpus: malformed row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " fields");
            }
            CorpusEntry e;
            std::size_t k = 0;
            if (has_id) {
                try {
                    std::size_t used = 0;
                    e.word_id = std::stoi(f[0], &used);
                    if (used != f[0].size()) throw std::invalid_argument("trailing");
                } catch (const std::exception&) {
                    throw FormatError("corpus: malformed word_id in row " + std::to_string(row));
                }
                k = 1;
            } else {
                e.word_id = static_cast<int>(entries.size());
            }
            e.word = f[k];
            e.tone = detail::parse_token<Tone, 4>(f[k + 1], 'T', "tone");
            e.initial = f[k + 2];
            e.initial8 = detail::parse_token<Initial8, 8>(f[k + 3], 'I', "initial8");
            e.final = f[k + 4];
            e.final_class = detail::parse_token<FinalClass, 4>(f[k + 5], 'F', "final_class");
            if (e.word.empty() || e.initial.empty() || e.final.empty()) {
                throw FormatError("corpus: empty field in row " + std::to_string(row));
            }
            entries.push_back(std::move(e));
        }
        return Corpus(std::move(entries));
    }

    static Corpus load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("corpus: cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    /// The bundled 48-word corpus.
    static Corpus bundled() { return parse(kDefaultCorpusCsv); }

    const std::vector<CorpusEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const CorpusEntry& by_id(int word_id) const {
        if (word_id < 0 || word_id >= kNumWords) throw InvalidArgument("word_id out of range");
        return entries_[by_id_[static_cast<std::size_t>(word_id)]];
    }

    int n_classes(TaskKind task) const {
        switch (task) {
            case TaskKind::Word: return kNumWords;
            case TaskKind::Tone: return 4;
            case TaskKind::Initial: return static_cast<int>(initial_tokens_.size());
            case TaskKind::Initial8: return 8;
            case TaskKind::FinalClass: return 4;
            case TaskKind::Final: return static_cast<int>(final_tokens_.size());
        }
        return 0;
    }

    /// Class index of `entry` under `task`. Class tokens are ordered
    /// lexicographically, so T1..T4, I1..I8, F1..F4 map to 0..n-1.
    int task_label(const CorpusEntry& entry, TaskKind task) const {
        switch (task) {
            case TaskKind::Word: return entry.word_id;
            case TaskKind::Tone: return static_cast<int>(entry.tone);
            case TaskKind::Initial: return index_of(initial_tokens_, entry.initial);
            case TaskKind::Initial8: return static_cast<int>(entry.initial8);
            case TaskKind::FinalClass: return static_cast<int>(entry.final_class);
            case TaskKind::Final: return index_of(final_tokens_, entry.final);
        }
        return 0;
    }

    int task_label(int word_id, TaskKind task) const { return task_label(by_id(word_id), task); }

    std::vector<int> class_counts(TaskKind task) const {
        std::vector<int> counts(static_cast<std::size_t>(n_classes(task)), 0);
        for (const auto& e : entries_) ++counts[static_cast<std::size_t>(task_label(e, task))];
        return counts;
    }

    const std::vector<std::string>& initial_tokens() const noexcept { return initial_tokens_; }
    const std::vector<std::string>& final_tokens() const noexcept { return final_tokens_; }

private:
    static std::vector<std::string> sorted_unique(std::vector<std::string> v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    }

    static int index_of(const std::vector<std::string>& tokens, const std::string& t) {
        const auto it = std::lower_bound(tokens.begin(), tokens.end(), t);
        return static_cast<int>(it - tokens.begin());
    }

    void validate() {
        if (entries_.size() != static_cast<std::size_t>(kNumWords)) {
            throw FormatError("corpus: entry count != 48 (got " + std::to_string(entries_.size()) +
                              ")");
        }
        by_id_.assign(kNumWords, entries_.size());
        std::map<std::string, int> words;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            if (e.word_id < 0 || e.word_id >= kNumWords) {
                throw FormatError("corpus: word_id " + std::to_string(e.word_id) + " out of range");
            }
            auto& slot = by_id_[static_cast<std::size_t>(e.word_id)];
            if (slot != entries_.size()) {
                throw FormatError("corpus: duplicate word_id " + std::to_string(e.word_id));
            }
            slot = i;
            if (!words.emplace(e.word, e.word_id).second) {
                throw FormatError("corpus: duplicate word '" + e.word + "'");
            }
        }
        std::array<int, 4> tones{};
        for (const auto& e : entries_) ++tones[static_cast<std::size_t>(e.tone)];
        for (int n : tones) {
            if (n != kNumWords / 4) throw FormatError("corpus: tone classes are not balanced");
        }
    }

    std::vector<CorpusEntry> entries_;
    std::vector<std::size_t> by_id_;
    std::vector<std::string> initial_tokens_;
    std::vector<std::string> final_tokens_;
};

}  // namespace masd
