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
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "masd/augment.hpp"
#include "masd/common.hpp"
#include "masd/dsp.hpp"
#include "masd/loss.hpp"
#include "masd/modality.hpp"
#include "masd/net.hpp"

namespace masd {

/// Fisher-Yates shuffle driven directly by the raw generator output, so the
/// permutation does not depend on the standard library's distributions.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { WithinSubject5Fold, LeaveOneSubjectOut };
enum class Partition : std::uint8_t { Train, Val, Test, Unused };

inline std::string to_string(SplitMode m) { return m == SplitMode::WithinSubject5Fold ? "within" : "cross"; }

inline SplitMode parse_split_mode(std::string_view s) {
    if (s == "within") return SplitMode::WithinSubject5Fold;
    if (s == "cross" || s == "loso") return SplitMode::LeaveOneSubjectOut;
    throw InvalidArgument("unknown cv mode '" + std::string(s) + "' (expected within|cross)");
}

/// Per-trial partition tags over the trial list the plan was built from.
struct SplitPlan {
    SplitMode mode = SplitMode::WithinSubject5Fold;
    std::vector<Partition> assignment;
    int fold = 0;
    std::uint64_t seed = 0;

    std::vector<std::size_t> indices(Partition p) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == p) out.push_back(i);
        }
        return out;
    }

    std::size_t count(Partition p) const {
        return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), p));
    }
};

inline constexpr int kWithinFolds = 5;

/// Block-wise 5-fold split of one subject's trials. Fold f tests on the f-th
/// fifth of the sorted block ids; of the remaining blocks one sixth (2 of 12)
/// are drawn by a seeded shuffle for validation and the rest train.
inline SplitPlan split_within(std::span<const EnvelopeTrial> trials, int fold, std::uint64_t seed) {
    if (fold < 0 || fold >= kWithinFolds) throw InvalidArgument("split_within: fold must lie in [0, 5)");
    std::set<int> subjects;
    std::set<int> block_set;
    for (const auto& t : trials) {
        subjects.insert(t.subject);
        block_set.insert(t.block);
    }
    if (subjects.size() > 1) throw InvalidArgument("split_within: trials span more than one subject");
    std::vector<int> blocks(block_set.begin(), block_set.end());
    if (blocks.empty() || blocks.size() % kWithinFolds != 0) {
        throw InvalidArgument("split_within: block count " + std::to_string(blocks.size()) +
                              " is not divisible into 5 folds");
    }
    const std::size_t n_test = blocks.size() / kWithinFolds;
    std::set<int> test(blocks.begin() + static_cast<std::ptrdiff_t>(n_test * static_cast<std::size_t>(fold)),
                       blocks.begin() + static_cast<std::ptrdiff_t>(n_test * static_cast<std::size_t>(fold + 1)));
    std::vector<int> rest;
    for (int b : blocks) {
        if (!test.count(b)) rest.push_back(b);
    }
    seeded_shuffle(rest, derive_seed(seed, static_cast<std::uint64_t>(fold)));
    const std::size_t n_val = std::max<std::size_t>(1, rest.size() / 6);
    std::set<int> val(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));

    SplitPlan plan;
    plan.mode = SplitMode::WithinSubject5Fold;
    plan.fold = fold;
    plan.seed = seed;
    plan.assignment.resize(trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const int b = trials[i].block;
        plan.assignment[i] = test.count(b) ? Partition::Test : val.count(b) ? Partition::Val : Partition::Train;
    }
    return plan;
}

/// Leave-one-subject-out split. A seeded eighth of every training subject's
/// trials is held out for validation.
inline SplitPlan split_cross(std::span<const EnvelopeTrial> trials, int held_out_subject, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < trials.size(); ++i) by_subject[trials[i].subject].push_back(i);
    if (by_subject.size() < 2) throw InvalidArgument("split_cross: need at least 2 subjects");
    if (!by_subject.count(held_out_subject)) {
        throw InvalidArgument("split_cross: unknown subject id " + std::to_string(held_out_subject));
    }
    SplitPlan plan;
    plan.mode = SplitMode::LeaveOneSubjectOut;
    plan.fold = held_out_subject;
    plan.seed = seed;
    plan.assignment.assign(trials.size(), Partition::Train);
    for (auto& [subject, idx] : by_subject) {
        if (subject == held_out_subject) {
            for (auto i : idx) plan.assignment[i] = Partition::Test;
            continue;
        }
        seeded_shuffle(idx, derive_seed(seed, static_cast<std::uint64_t>(subject)));
        const std::size_t n_val = idx.size() / 8;
        for (std::size_t k = 0; k < n_val; ++k) plan.assignment[idx[k]] = Partition::Val;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// One AdamW update of a parameter block. Weight decay is decoupled: it
/// shrinks the parameters directly instead of entering the moments. `step`
/// is the 1-based step count used for bias correction.
inline void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                         long step, const AdamWConfig& cfg) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
}

class AdamW {
public:
    explicit AdamW(const std::vector<NamedParam>& params, AdamWConfig cfg = {}) : params_(params), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.var->size(), 0.0);
            v_.emplace_back(p.var->size(), 0.0);
        }
    }

    /// Applies one update from the accumulated gradients. Throws before
    /// touching any parameter if a gradient is not finite.
    void step() {
        for (const auto& p : params_) {
            if (!all_finite(p.var->grad)) throw Error("optimizer: non-finite gradient in '" + p.name + "'");
        }
        ++step_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            adamw_update(params_[i].var->value, params_[i].var->grad, m_[i], v_[i], step_, cfg_);
        }
    }

    long steps() const noexcept { return step_; }

private:
    std::vector<NamedParam> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long step_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct Augmentation {
    NoiseConfig noise;
    NoiseDomain domain = NoiseDomain::Time;
};

struct TrainConfig {
    int batch_size = 48;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int max_epochs = 100;
    int patience = 50;
    std::uint64_t seed = 0;
    LossConfig loss;
    std::optional<Augmentation> augmentation;
};

inline std::vector<std::string> validate(const TrainConfig& cfg, const std::string& prefix = "train") {
    std::vector<std::string> out;
    if (cfg.batch_size < 1) out.push_back(prefix + ".batch_size must be >= 1");
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) out.push_back(prefix + ".lr must be > 0");
    if (!(cfg.weight_decay >= 0.0)) out.push_back(prefix + ".weight_decay must be >= 0");
    if (cfg.max_epochs < 1) out.push_back(prefix + ".max_epochs must be >= 1");
    if (cfg.patience < 1) out.push_back(prefix + ".patience must be >= 1");
    for (auto& m : validate(cfg.loss, "loss")) out.push_back(std::move(m));
    if (cfg.augmentation) {
        for (auto& m : validate(cfg.augmentation->noise, "noise")) out.push_back(std::move(m));
    }
    return out;
}

/// Frozen modality features used by the alignment terms; either may be absent.
struct Assist {
    const EmbeddingTable* text = nullptr;
    const EmbeddingTable* speech = nullptr;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_top1 = 0.0;
};

struct FitResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    /// Validation loss recomputed after restoring the best parameters.
    double restored_val_loss = 0.0;
    /// Every original trial index that contributed to a training batch,
    /// including through an augmented copy.
    std::set<std::size_t> trained_indices;
    std::size_t n_train_examples = 0;
};

/// Fingerprint of the raw values of the trials in one partition.
inline std::string partition_checksum(std::span<const EnvelopeTrial> trials, const SplitPlan& plan, Partition p) {
    std::string bytes;
    for (auto i : plan.indices(p)) {
        const auto& d = trials[i].data.data();
        bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
    }
    return fingerprint(bytes);
}

/// Stacks trials into a [B x C x T] constant.
inline ag::Var make_batch(std::span<const EnvelopeTrial* const> batch) {
    if (batch.empty()) throw InvalidArgument("make_batch: empty batch");
    const std::size_t c = batch[0]->data.rows(), t = batch[0]->data.cols();
    std::vector<double> v;
    v.reserve(batch.size() * c * t);
    for (const auto* tr : batch) {
        if (tr->data.rows() != c || tr->data.cols() != t) throw InvalidArgument("make_batch: trial shapes differ");
        v.insert(v.end(), tr->data.data().begin(), tr->data.data().end());
    }
    return ag::constant({batch.size(), c, t}, std::move(v));
}

namespace detail {

inline MatrixD gather_rows(const EmbeddingTable& table, std::span<const EnvelopeTrial* const> batch) {
    MatrixD z(batch.size(), static_cast<std::size_t>(table.dim));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const int w = batch[i]->word_id;
        if (w < 0 || static_cast<std::size_t>(w) >= table.vectors.size()) {
            throw InvalidArgument("fit: word_id " + std::to_string(w) + " not in embedding table");
        }
        std::copy(table.vectors[static_cast<std::size_t>(w)].begin(), table.vectors[static_cast<std::size_t>(w)].end(),
                  z.row(i).begin());
    }
    return z;
}

struct BatchLoss {
    ag::Var total;
    ag::Var logits;
};

inline BatchLoss batch_loss(ag::Tape& tape, Model& model, std::span<const EnvelopeTrial* const> batch,
                            std::span<const int> labels, const LossConfig& loss, const Assist& assist) {
    auto out = model.forward(tape, make_batch(batch));
    std::vector<ag::Var> terms{ag::cross_entropy(tape, out.logits, labels)};
    std::vector<double> weights{1.0};
    if (assist.text != nullptr && loss.lambda_t > 0.0) {
        terms.push_back(ag::info_nce(tape, out.zt, gather_rows(*assist.text, batch), loss.tau));
        weights.push_back(loss.lambda_t);
    }
    if (assist.speech != nullptr && loss.lambda_s > 0.0) {
        terms.push_back(ag::info_nce(tape, out.zs, gather_rows(*assist.speech, batch), loss.tau));
        weights.push_back(loss.lambda_s);
    }
    return {ag::weighted_sum(tape, terms, weights), out.logits};
}

}  // namespace detail

struct EvalStats {
    double loss = 0.0;
    double top1 = 0.0;
};

/// Mean objective and top-1 accuracy in evaluation mode, batched in index order.
inline EvalStats evaluate_loss(Model& model, std::span<const EnvelopeTrial> trials, std::span<const int> labels,
                               std::span<const std::size_t> indices, const TrainConfig& cfg, const Assist& assist) {
    const Mode saved = model.mode();
    model.set_mode(Mode::Eval);
    EvalStats s;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < indices.size(); start += bs) {
        const std::size_t end = std::min(indices.size(), start + bs);
        std::vector<const EnvelopeTrial*> batch;
        std::vector<int> y;
        for (std::size_t k = start; k < end; ++k) {
            batch.push_back(&trials[indices[k]]);
            y.push_back(labels[indices[k]]);
        }
        ag::Tape tape;
        tape.set_grad_enabled(false);
        auto r = detail::batch_loss(tape, model, batch, y, cfg.loss, assist);
        s.loss += r.total->value[0] * static_cast<double>(batch.size());
        const std::size_t k = r.logits->shape[1];
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto* row = r.logits->value.data() + i * k;
            const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
            if (pred == y[i]) s.top1 += 1.0;
        }
    }
    s.loss /= static_cast<double>(indices.size());
    s.top1 /= static_cast<double>(indices.size());
    model.set_mode(saved);
    return s;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` on the Train partition with early stopping on the
/// validation objective and restores the best parameters. `labels[i]` is the
/// class of trials[i] under the current task.
inline FitResult fit(Model& model, const SplitPlan& split, std::span<const EnvelopeTrial> trials,
                     std::span<const int> labels, const TrainConfig& cfg, const Assist& assist = {},
                     const EpochCallback& on_epoch = {}) {
    if (const auto v = validate(cfg); !v.empty()) throw InvalidArgument(v.front());
    if (split.assignment.size() != trials.size() || labels.size() != trials.size()) {
        throw InvalidArgument("fit: split, trials and labels differ in length");
    }
    const auto train_idx = split.indices(Partition::Train);
    const auto val_idx = split.indices(Partition::Val);
    const auto test_idx = split.indices(Partition::Test);
    if (train_idx.empty() || val_idx.empty()) throw InvalidArgument("fit: empty train or validation partition");
    for (const auto* t : {assist.text, assist.speech}) {
        if (t != nullptr && t->vectors.size() != static_cast<std::size_t>(kNumWords)) {
            throw InvalidArgument("fit: embedding table does not cover the corpus");
        }
    }
    if (assist.text != nullptr && assist.text->dim != model.config().branch_dim_t) {
        throw InvalidArgument("fit: text table dim " + std::to_string(assist.text->dim) +
                              " != branch_dim_t " + std::to_string(model.config().branch_dim_t));
    }
    if (assist.speech != nullptr && assist.speech->dim != model.config().branch_dim_s) {
        throw InvalidArgument("fit: speech table dim " + std::to_string(assist.speech->dim) +
                              " != branch_dim_s " + std::to_string(model.config().branch_dim_s));
    }
    const auto held_out_sum = partition_checksum(trials, split, Partition::Val) +
                              partition_checksum(trials, split, Partition::Test);

    // Training pool: originals plus static augmented copies of train trials only.
    struct Example {
        const EnvelopeTrial* trial;
        int label;
        std::size_t source;
    };
    std::vector<EnvelopeTrial> augmented;
    std::vector<std::size_t> augmented_source;
    if (cfg.augmentation && cfg.augmentation->noise.copies > 0) {
        std::vector<EnvelopeTrial> train_trials;
        for (auto i : train_idx) train_trials.push_back(trials[i]);
        augmented = augment_all(train_trials, cfg.augmentation->noise, cfg.augmentation->domain,
                                derive_seed(cfg.seed, 0xA0));
        const auto copies = static_cast<std::size_t>(cfg.augmentation->noise.copies);
        for (std::size_t k = 0; k < augmented.size(); ++k) augmented_source.push_back(train_idx[k / copies]);
    }
    std::vector<Example> pool;
    for (auto i : train_idx) pool.push_back({&trials[i], labels[i], i});
    for (std::size_t k = 0; k < augmented.size(); ++k) {
        pool.push_back({&augmented[k], labels[augmented_source[k]], augmented_source[k]});
    }

    FitResult result;
    result.n_train_examples = pool.size();
    model.seed_dropout(derive_seed(cfg.seed, 0xD0));
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(model.parameters(), opt_cfg);
    std::vector<double> best_state = model.state();
    int since_best = 0;
    std::vector<std::size_t> order(pool.size());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        seeded_shuffle(order, derive_seed(cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch)));
        model.set_mode(Mode::Train);
        double train_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            std::vector<const EnvelopeTrial*> batch;
            std::vector<int> y;
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = pool[order[k]];
                batch.push_back(ex.trial);
                y.push_back(ex.label);
                result.trained_indices.insert(ex.source);
            }
            ag::Tape tape;
            model.zero_grad();
            auto r = detail::batch_loss(tape, model, batch, y, cfg.loss, assist);
            tape.backward(r.total);
            opt.step();
            train_loss += r.total->value[0] * static_cast<double>(batch.size());
        }
        train_loss /= static_cast<double>(order.size());

        const auto val = evaluate_loss(model, trials, labels, val_idx, cfg, assist);
        if (!std::isfinite(val.loss) || !std::isfinite(train_loss)) {
            throw Error("fit: loss became non-finite at epoch " + std::to_string(epoch));
        }
        EpochRecord rec{epoch, train_loss, val.loss, val.top1};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (val.loss < result.best_val_loss) {
            result.best_val_loss = val.loss;
            result.best_epoch = epoch;
            best_state = model.state();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model.set_state(best_state);
    model.set_mode(Mode::Eval);
    result.restored_val_loss = evaluate_loss(model, trials, labels, val_idx, cfg, assist).loss;

    for (auto i : test_idx) {
        if (result.trained_indices.count(i)) throw Error("fit: test trial " + std::to_string(i) + " reached training");
    }
    const auto after = partition_checksum(trials, split, Partition::Val) +
                       partition_checksum(trials, split, Partition::Test);
    if (after != held_out_sum) throw Error("fit: held-out trials were modified during training");
    return result;
}

}  // namespace masd
