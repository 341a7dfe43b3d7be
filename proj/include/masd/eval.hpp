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
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/common.hpp"
#include "masd/corpus.hpp"
#include "masd/dsp.hpp"
#include "masd/net.hpp"
#include "masd/trainer.hpp"

namespace masd {

/// Fraction of rows whose label is among the k largest logits. Equal logits
/// rank the lower class index first.
inline double topk_accuracy(const MatrixD& logits, std::span<const int> labels, int k) {
    const auto n = logits.rows(), classes = logits.cols();
    if (k < 1 || static_cast<std::size_t>(k) > classes) throw InvalidArgument("topk_accuracy: k out of range");
    if (labels.size() != n || n == 0) throw InvalidArgument("topk_accuracy: label count does not match rows");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InvalidArgument("topk_accuracy: label out of range");
        const double ly = row[static_cast<std::size_t>(y)];
        // Rank of y = classes strictly ahead of it under (value desc, index asc).
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (row[j] > ly || (row[j] == ly && j < static_cast<std::size_t>(y))) ++ahead;
        }
        if (ahead < static_cast<std::size_t>(k)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

/// Top-1 predictions with the same tie rule as topk_accuracy.
inline std::vector<int> argmax_rows(const MatrixD& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

/// Mean per-class recall over the classes present in `labels`.
inline double bca(std::span<const int> predictions, std::span<const int> labels, int k) {
    if (labels.empty()) throw InvalidArgument("bca: no samples");
    if (predictions.size() != labels.size()) throw InvalidArgument("bca: prediction count does not match labels");
    std::vector<std::size_t> total(static_cast<std::size_t>(k), 0), correct(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) throw InvalidArgument("bca: label out of range");
        ++total[static_cast<std::size_t>(labels[i])];
        if (predictions[i] == labels[i]) ++correct[static_cast<std::size_t>(labels[i])];
    }
    double sum = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < total.size(); ++c) {
        if (total[c] == 0) continue;
        sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
        ++present;
    }
    return sum / present;
}

/// Eval-mode logits for the given trial indices.
inline MatrixD predict_logits(Model& model, std::span<const EnvelopeTrial> trials, std::span<const std::size_t> indices,
                              int batch_size = 48) {
    const Mode saved = model.mode();
    model.set_mode(Mode::Eval);
    MatrixD out(indices.size(), static_cast<std::size_t>(model.config().n_classes));
    const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t start = 0; start < indices.size(); start += bs) {
        const std::size_t end = std::min(indices.size(), start + bs);
        std::vector<const EnvelopeTrial*> batch;
        for (std::size_t k = start; k < end; ++k) batch.push_back(&trials[indices[k]]);
        ag::Tape tape;
        tape.set_grad_enabled(false);
        const auto logits = model.forward_logits(tape, make_batch(batch));
        std::copy(logits->value.begin(), logits->value.end(), out.row(start).begin());
    }
    model.set_mode(saved);
    return out;
}

struct RunResult {
    std::string approach;
    TaskKind task = TaskKind::Word;
    SplitMode mode = SplitMode::WithinSubject5Fold;
    int subject = 0;
    int fold = 0;
    std::uint64_t seed = 0;
    double top1 = 0.0;
    double top5 = 0.0;
    double bca = 0.0;
    std::size_t n_test = 0;
    std::string fingerprint;
};

/// Metrics of a trained model on the Test partition.
inline RunResult score(Model& model, std::span<const EnvelopeTrial> trials, std::span<const int> labels,
                       const SplitPlan& split, int n_classes) {
    const auto idx = split.indices(Partition::Test);
    if (idx.empty()) throw InvalidArgument("score: empty test partition");
    const auto logits = predict_logits(model, trials, idx);
    std::vector<int> y;
    for (auto i : idx) y.push_back(labels[i]);
    RunResult r;
    r.mode = split.mode;
    r.fold = split.fold;
    r.n_test = idx.size();
    r.top1 = topk_accuracy(logits, y, 1);
    r.top5 = topk_accuracy(logits, y, std::min(5, n_classes));
    r.bca = bca(argmax_rows(logits), y, n_classes);
    return r;
}

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;
};

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
inline MetricSummary summarize(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("summarize: no values");
    const double m = mean(v);
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

struct AggregateRow {
    std::string approach;
    std::string subject;  // subject id, or "Average"
    std::size_t n = 0;
    MetricSummary top1, top5, bca;
};

/// Per-(approach, subject) means and SDs plus one "Average" row per approach
/// computed over all results of that approach.
inline std::vector<AggregateRow> aggregate(std::span<const RunResult> results) {
    if (results.empty()) throw InvalidArgument("aggregate: no results");
    for (const auto& r : results) {
        if (r.task != results.front().task) throw InvalidArgument("aggregate: results mix tasks");
    }
    std::map<std::pair<std::string, int>, std::vector<const RunResult*>> groups;
    std::map<std::string, std::vector<const RunResult*>> overall;
    for (const auto& r : results) {
        groups[{r.approach, r.subject}].push_back(&r);
        overall[r.approach].push_back(&r);
    }
    auto make = [](const std::string& approach, const std::string& subject, const std::vector<const RunResult*>& rs) {
        std::vector<double> t1, t5, b;
        for (const auto* r : rs) {
            t1.push_back(r->top1);
            t5.push_back(r->top5);
            b.push_back(r->bca);
        }
        return AggregateRow{approach, subject, rs.size(), summarize(t1), summarize(t5), summarize(b)};
    };
    std::vector<AggregateRow> out;
    for (const auto& [key, rs] : groups) out.push_back(make(key.first, std::to_string(key.second), rs));
    for (const auto& [approach, rs] : overall) out.push_back(make(approach, "Average", rs));
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string format_general(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline constexpr const char* kResultsHeader = "approach,subject,fold,seed,task,top1,top5,bca,n_test";

inline std::string results_csv(std::span<const RunResult> results) {
    std::ostringstream os;
    os << kResultsHeader << '\n';
    for (const auto& r : results) {
        os << r.approach << ',' << r.subject << ',' << r.fold << ',' << r.seed << ',' << to_string(r.task) << ','
           << format_double(r.top1) << ',' << format_double(r.top5) << ',' << format_double(r.bca) << ','
           << r.n_test << '\n';
    }
    return os.str();
}

/// Table-shaped summary: one object per approach with a row per subject and an "Average" row.
inline nlohmann::ordered_json summary_json(std::span<const RunResult> results) {
    nlohmann::ordered_json doc;
    doc["task"] = to_string(results.front().task);
    doc["cv"] = to_string(results.front().mode);
    nlohmann::ordered_json approaches = nlohmann::ordered_json::object();
    for (const auto& row : aggregate(results)) {
        nlohmann::ordered_json cell;
        cell["n"] = row.n;
        cell["top1_mean"] = row.top1.mean;
        cell["top1_sd"] = row.top1.sd;
        cell["top5_mean"] = row.top5.mean;
        cell["top5_sd"] = row.top5.sd;
        cell["bca_mean"] = row.bca.mean;
        cell["bca_sd"] = row.bca.sd;
        approaches[row.approach][row.subject] = std::move(cell);
    }
    doc["approaches"] = std::move(approaches);
    return doc;
}

inline constexpr const char* kHistoryHeader = "epoch,train_loss,val_loss,val_top1";

inline std::string history_csv(std::span<const EpochRecord> history) {
    std::ostringstream os;
    os << kHistoryHeader << '\n';
    for (const auto& h : history) {
        os << h.epoch << ',' << format_double(h.train_loss) << ',' << format_double(h.val_loss) << ','
           << format_double(h.val_top1) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Energy maps

struct EnergyMap {
    std::vector<std::string> groups;
    MatrixD energy;  // channels x groups
};

/// Mean squared envelope per channel for each word. Rows are channels and
/// columns follow ascending word_id among the words present.
inline EnergyMap energy_by_word(std::span<const EnvelopeTrial> trials) {
    if (trials.empty()) throw InvalidArgument("energy_map: no trials");
    const std::size_t c = trials[0].data.rows(), t = trials[0].data.cols();
    std::map<int, std::pair<std::vector<double>, std::size_t>> acc;
    for (const auto& tr : trials) {
        if (tr.data.rows() != c || tr.data.cols() != t) throw InvalidArgument("energy_map: trial shapes differ");
        auto& [sum, n] = acc[tr.word_id];
        if (sum.empty()) sum.assign(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double e = 0.0;
            for (double v : tr.data.row(ch)) e += v * v;
            sum[ch] += e / static_cast<double>(t);
        }
        ++n;
    }
    EnergyMap m;
    m.energy = MatrixD(c, acc.size());
    std::size_t g = 0;
    for (const auto& [word, entry] : acc) {
        m.groups.push_back("word_" + std::to_string(word));
        for (std::size_t ch = 0; ch < c; ++ch) m.energy(ch, g) = entry.first[ch] / static_cast<double>(entry.second);
        ++g;
    }
    return m;
}

/// Mean squared envelope per channel in consecutive windows of `window` samples.
inline EnergyMap energy_by_window(std::span<const EnvelopeTrial> trials, std::size_t window) {
    if (trials.empty()) throw InvalidArgument("energy_map: no trials");
    if (window < 1) throw InvalidArgument("energy_map: window must be >= 1");
    const std::size_t c = trials[0].data.rows(), t = trials[0].data.cols();
    const std::size_t groups = (t + window - 1) / window;
    EnergyMap m;
    m.energy = MatrixD(c, groups);
    for (std::size_t g = 0; g < groups; ++g) {
        m.groups.push_back("t" + std::to_string(g * window) + "_" + std::to_string(std::min(t, (g + 1) * window)));
    }
    for (const auto& tr : trials) {
        if (tr.data.rows() != c || tr.data.cols() != t) throw InvalidArgument("energy_map: trial shapes differ");
        for (std::size_t ch = 0; ch < c; ++ch) {
            const auto row = tr.data.row(ch);
            for (std::size_t g = 0; g < groups; ++g) {
                const std::size_t b = g * window, e = std::min(t, b + window);
                double s = 0.0;
                for (std::size_t i = b; i < e; ++i) s += row[i] * row[i];
                m.energy(ch, g) += s / static_cast<double>(e - b);
            }
        }
    }
    for (double& v : m.energy.data()) v /= static_cast<double>(trials.size());
    return m;
}

inline std::string energy_csv(const EnergyMap& m) {
    std::ostringstream os;
    os << "channel";
    for (const auto& g : m.groups) os << ',' << g;
    os << '\n';
    for (std::size_t ch = 0; ch < m.energy.rows(); ++ch) {
        os << ch;
        for (double v : m.energy.row(ch)) os << ',' << format_general(v);
        os << '\n';
    }
    return os.str();
}

}  // namespace masd
