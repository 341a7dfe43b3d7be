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

// Acceptance runner: one PASS/FAIL line per criterion, tolerances and time
// budgets fixed below. Pass criterion numbers as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "masd/experiment.hpp"

namespace {

using namespace masd;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;  // wall-clock limit, part of the pass condition
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("masd_accept_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Exact upper tail P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
    double p = 0.0;
    for (int k = wins; k <= n; ++k) {
        double c = 1.0;
        for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
        p += c;
    }
    return p / std::ldexp(1.0, n);
}

// ---------------------------------------------------------------------------
// 1. DSP oracles

std::vector<double> tone(double freq, double fs, std::size_t n, double amp = 1.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * kPi * freq * i / fs);
    return x;
}

double probe_amplitude(const std::vector<double>& x, double freq, double fs, std::size_t begin, std::size_t end) {
    double s = 0, c = 0;
    for (std::size_t i = begin; i < end; ++i) {
        s += x[i] * std::sin(2 * kPi * freq * i / fs);
        c += x[i] * std::cos(2 * kPi * freq * i / fs);
    }
    return 2.0 * std::hypot(s, c) / static_cast<double>(end - begin);
}

double filtered_ratio(double freq) {
    const double fs = 1000.0;
    const std::size_t n = 4000;
    MatrixD m(1, n);
    const auto x = tone(freq, fs, n);
    std::copy(x.begin(), x.end(), m.row(0).begin());
    const auto y = dsp::bandpass_notch(m, fs);
    const std::vector<double> out(y.row(0).begin(), y.row(0).end());
    return probe_amplitude(out, freq, fs, 1000, 3000) / probe_amplitude(x, freq, fs, 1000, 3000);
}

Outcome dsp_oracles() {
    Outcome o;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(3.0, 2.0);

    // Detrend against the least-squares line from the normal equations.
    double detrend_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng() % 500;
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = g(rng) + 0.01 * static_cast<double>(i);
        double st = 0, stt = 0, sy = 0, sty = 0;
        for (std::size_t i = 0; i < n; ++i) st += i, stt += double(i) * i, sy += x[i], sty += i * x[i];
        const double b = (n * sty - st * sy) / (n * stt - st * st);
        const double a = (sy - b * st) / n;
        const auto r = dsp::detrend(x);
        for (std::size_t i = 0; i < n; ++i) detrend_err = std::max(detrend_err, std::abs(r[i] - (x[i] - a - b * i)));
    }

    // Re-referencing: zero column sums, idempotent, equal to x - column mean.
    MatrixD m(7, 50);
    for (double& v : m.data()) v = g(rng);
    const auto once = dsp::rereference(m), twice = dsp::rereference(once);
    double reref_err = 0.0;
    for (std::size_t t = 0; t < m.cols(); ++t) {
        double col = 0, mean = 0;
        for (std::size_t c = 0; c < m.rows(); ++c) col += once(c, t), mean += m(c, t) / m.rows();
        reref_err = std::max(reref_err, std::abs(col));
        for (std::size_t c = 0; c < m.rows(); ++c) {
            reref_err = std::max({reref_err, std::abs(once(c, t) - (m(c, t) - mean)), std::abs(twice(c, t) - once(c, t))});
        }
    }

    double pass_min = 1.0, stop_max = 0.0;
    for (double f : {90.0, 120.0, 150.0}) pass_min = std::min(pass_min, filtered_ratio(f));
    for (double f : {10.0, 50.0, 300.0}) stop_max = std::max(stop_max, filtered_ratio(f));

    const double amp = 2.5;
    const auto env = dsp::hilbert_envelope(tone(50, 1000, 1000, amp));
    double hilbert_err = 0.0;
    for (std::size_t i = 100; i < 900; ++i) hilbert_err = std::max(hilbert_err, std::abs(env[i] - amp) / amp);

    o.pass = detrend_err < 1e-9 && reref_err < 1e-9 && pass_min >= 0.9 && stop_max <= 0.1 && hilbert_err < 0.01;
    o.detail = "detrend err " + fmt("%.1e", detrend_err) + ", reref err " + fmt("%.1e", reref_err) + ", passband min " +
               fmt("%.3f", pass_min) + ", stopband max " + fmt("%.4f", stop_max) + ", envelope rel err " +
               fmt("%.2e", hilbert_err);
    return o;
}

// ---------------------------------------------------------------------------
// 2. Gradients

Outcome gradients() {
    using testing::gradient_check;
    ModelConfig mc = testing::tiny_config();
    mc.n_temporal_filters = 8;  // F1 = 8
    mc.depth_multiplier = 1;    // F2 = F1 * D = 8
    const double tau = 0.01;
    const std::vector<int> labels{0, 1, 2, 3, 4, 0};
    const auto zt = testing::random_matrix(6, 8, 10), zs = testing::random_matrix(6, 8, 11);

    // The combined objective goes through the training loss builder.
    const auto corpus = Corpus::bundled();
    PseudoEmbeddingConfig pc;
    pc.dim = 8;
    const auto text = pseudo_embeddings(Modality::Text, corpus, pc);
    pc.seed = 2;
    const auto speech = pseudo_embeddings(Modality::Speech, corpus, pc);
    std::vector<EnvelopeTrial> trials;
    for (int i = 0; i < 6; ++i) trials.push_back({testing::random_matrix(4, 32, 20 + i), 7 * i, 0, 0});
    std::vector<const EnvelopeTrial*> batch_ptrs;
    for (const auto& t : trials) batch_ptrs.push_back(&t);
    LossConfig lc;
    lc.tau = tau;
    lc.lambda_t = 0.5;
    lc.lambda_s = 0.7;

    Outcome o;
    double worst = 0.0;
    std::size_t checked = 0;
    const std::vector<std::pair<std::string, std::function<ag::Var(Model&, ag::Tape&, const ag::Var&)>>> losses{
        {"ce", [&](Model& m, ag::Tape& t, const ag::Var& x) { return ag::cross_entropy(t, m.forward_logits(t, x), labels); }},
        {"text", [&](Model& m, ag::Tape& t, const ag::Var& x) { return ag::info_nce(t, m.forward(t, x).zt, zt, tau); }},
        {"speech", [&](Model& m, ag::Tape& t, const ag::Var& x) { return ag::info_nce(t, m.forward(t, x).zs, zs, tau); }},
    };
    std::uint64_t seed = 30;
    for (const auto& [name, fn] : losses) {
        Model model(mc, ++seed);
        const auto x = testing::random_batch(6, 4, 32, ++seed);
        const auto r = gradient_check(model, [&, &fn = fn](ag::Tape& t) { return fn(model, t, x); });
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        o.detail += name + " " + fmt("%.1e", r.max_rel_error) + ", ";
    }
    {
        Model model(mc, ++seed);
        const auto r = gradient_check(model, [&](ag::Tape& t) {
            return detail::batch_loss(t, model, batch_ptrs, labels, lc, {&text, &speech}).total;
        });
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        o.detail += "combined " + fmt("%.1e", r.max_rel_error);
    }
    o.pass = worst < 1e-3;
    o.detail += " (tau " + fmt("%g", tau) + ", " + std::to_string(checked) + " elements)";
    return o;
}

// ---------------------------------------------------------------------------
// 3. InfoNCE closed forms

Outcome info_nce_forms() {
    const auto a = testing::random_matrix(1, 6, 2), b = testing::random_matrix(1, 6, 3);
    const double single = info_nce(a, b, 0.01);
    double uniform_err = 0.0;
    for (std::size_t n : {2u, 8u, 48u}) {
        // Every brain row is orthogonal to every modality row.
        MatrixD zb(n, 2), zm(n, 2);
        for (std::size_t i = 0; i < n; ++i) zb(i, 0) = 1.0 + static_cast<double>(i), zm(i, 1) = 2.0;
        uniform_err = std::max(uniform_err, std::abs(info_nce(zb, zm, 0.01) - std::log(static_cast<double>(n))));
    }
    const auto zb = testing::random_matrix(8, 4, 6), zm = testing::random_matrix(8, 4, 7);
    auto sb = zb, sm = zm;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.01, 100.0);
    for (std::size_t i = 0; i < 8; ++i) {
        const double kb = u(rng), km = u(rng);
        for (std::size_t k = 0; k < 4; ++k) sb(i, k) *= kb, sm(i, k) *= km;
    }
    const double scale_err = std::abs(info_nce(zb, zm, 0.01) - info_nce(sb, sm, 0.01));
    Outcome o;
    o.pass = single == 0.0 && uniform_err < 1e-9 && scale_err < 1e-9;
    o.detail = "B=1 loss " + fmt("%g", single) + ", |L - ln B| " + fmt("%.1e", uniform_err) + ", rescale diff " +
               fmt("%.1e", scale_err);
    return o;
}

// ---------------------------------------------------------------------------
// 4. Noise statistics

double periodogram_slope(const std::vector<double>& x) {
    const auto bins = fft::rfft(x);
    const std::size_t hi = x.size() / 8;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(hi);
    for (std::size_t k = 1; k <= hi; ++k) {
        const double lx = std::log(static_cast<double>(k));
        const double ly = std::log(std::norm(bins[k]));
        sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

Outcome noise_statistics() {
    const std::size_t n = 1'000'000;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i + 1);
    x[0] = -1.0, x[1] = 2.0 * n;  // extremes, so interior replacements are visible
    Rng rng(5);
    const double ps = 0.05, pp = 0.05;
    const auto y = salt_pepper(x, ps, pp, rng);
    std::size_t changed = 0;
    for (std::size_t i = 2; i < n; ++i) changed += y[i] != x[i];
    const double frac = static_cast<double>(changed) / static_cast<double>(n - 2);

    double slope_err = 0.0;
    for (double alpha : {0.5, 1.0, 2.0}) {
        NoiseConfig cfg;
        cfg.kind = NoiseKind::Pink;
        cfg.alpha = alpha;
        Rng r(3);
        slope_err = std::max(slope_err, std::abs(periodogram_slope(sample_noise(cfg, 1 << 16, r)) + alpha));
    }

    NoiseConfig pc;
    pc.kind = NoiseKind::Poisson;
    pc.kappa = 4.0;
    Rng r(2);
    const auto p = sample_noise(pc, n, r);
    double mean = 0.0;
    for (double v : p) mean += v / static_cast<double>(n);

    Outcome o;
    o.pass = std::abs(frac - (ps + pp)) <= 0.002 && slope_err <= 0.2 && std::abs(mean) <= 0.01;
    o.detail = "corrupted " + fmt("%.4f", frac) + " (target " + fmt("%.2f", ps + pp) + "), worst slope err " +
               fmt("%.3f", slope_err) + ", Poisson mean " + fmt("%.4f", mean);
    return o;
}

// ---------------------------------------------------------------------------
// Synthetic training criteria share one desk-scale setup.

SynthSpec desk_synth(TemplateMode mode, double snr_db, double coupling) {
    SynthSpec s;
    s.config.channels = 16;
    s.config.template_mode = mode;
    s.config.snr_db = snr_db;
    s.config.embedding_coupling = coupling;
    return s;
}

ExperimentSpec desk_spec(const fs::path& out, int repeats) {
    ExperimentSpec s;
    s.dataset = "synthetic";
    s.out = out.string();
    s.repeats = repeats;
    s.folds = {0};
    s.model.temporal_kernel = 25;
    s.model.n_temporal_filters = 4;
    s.model.separable_kernel = 8;
    s.model.branch_dim_t = s.model.branch_dim_s = 16;
    s.train.loss.tau = 0.1;
    return s;
}

struct Prepared {
    Corpus corpus = Corpus::bundled();
    Tables tables;
    std::vector<EnvelopeTrial> trials;
};

Prepared prepare(const SynthSpec& spec) {
    Prepared p;
    p.tables = pseudo_tables(spec, p.corpus);
    std::vector<const EmbeddingTable*> coupled;
    if (spec.config.embedding_coupling > 0.0) coupled = {&*p.tables.text, &*p.tables.speech};
    p.trials = preprocess_all(generate(spec.config, p.corpus, coupled));
    return p;
}

std::vector<RunResult> train(const ExperimentSpec& s, const Prepared& p) {
    const auto run = run_training(s, p.trials, p.corpus, p.tables);
    fs::remove_all(s.out);
    return run.results;
}

double mean_of(const std::vector<RunResult>& rs, double RunResult::*field) {
    double m = 0.0;
    for (const auto& r : rs) m += r.*field / static_cast<double>(rs.size());
    return m;
}

Outcome chance_level() {
    const auto p = prepare(desk_synth(TemplateMode::RandomLabel, 0.0, 0.0));
    const auto rs = train(desk_spec(scratch("chance"), 5), p);
    const double t1 = mean_of(rs, &RunResult::top1), t5 = mean_of(rs, &RunResult::top5);
    Outcome o;
    o.pass = t1 >= 0.01 && t1 <= 0.04 && t5 >= 0.07 && t5 <= 0.14;
    o.detail = "top1 " + fmt("%.4f", t1) + " in [0.01, 0.04], top5 " + fmt("%.4f", t5) + " in [0.07, 0.14] over " +
               std::to_string(rs.size()) + " runs";
    return o;
}

Outcome learnability() {
    const auto p = prepare(desk_synth(TemplateMode::Separable, 20.0, 0.0));
    auto s = desk_spec(scratch("learn"), 1);
    s.train.max_epochs = 100;
    const auto rs = train(s, p);
    Outcome o;
    o.pass = rs[0].top1 >= 0.9;
    o.detail = "top1 " + fmt("%.4f", rs[0].top1) + " >= 0.9 within " + std::to_string(s.train.max_epochs) + " epochs";
    return o;
}

// Paired comparison over 10 seeds: same splits and initial weights per seed.
Outcome paired(const std::vector<RunResult>& base, const std::vector<RunResult>& treated, const std::string& a,
               const std::string& b, bool require_sign_test) {
    int wins = 0, ties = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (treated[i].top5 > base[i].top5) ++wins;
        if (treated[i].top5 == base[i].top5) ++ties;
    }
    const int n = static_cast<int>(base.size()) - ties;
    const double p = n > 0 ? sign_test_p(wins, n) : 1.0;
    const double mb = mean_of(base, &RunResult::top5), mt = mean_of(treated, &RunResult::top5);
    Outcome o;
    o.pass = mt >= mb && (!require_sign_test || p < 0.1);
    o.detail = "mean top5 " + a + " " + fmt("%.4f", mt) + " vs " + b + " " + fmt("%.4f", mb) + ", wins " +
               std::to_string(wins) + "/" + std::to_string(n) + ", sign test p " + fmt("%.4f", p);
    return o;
}

Outcome masd_benefit() {
    const auto p = prepare(desk_synth(TemplateMode::ClassStructured, 0.0, 1.0));
    auto s = desk_spec(scratch("single"), 10);
    const auto single = train(s, p);
    s.out = scratch("masd").string();
    s.approach = Approach::Masd;
    s.text_emb = s.speech_emb = "pseudo";
    const auto masd = train(s, p);
    return paired(single, masd, "masd", "single", true);
}

Outcome augmentation_benefit() {
    const auto p = prepare(desk_synth(TemplateMode::ClassStructured, -5.0, 1.0));
    auto s = desk_spec(scratch("plain"), 10);
    const auto plain = train(s, p);
    s.out = scratch("augmented").string();
    s.augment = true;
    s.augmentation.noise.kind = NoiseKind::SaltPepper;
    s.augmentation.domain = NoiseDomain::Time;
    const auto augmented = train(s, p);
    return paired(plain, augmented, "augmented", "plain", false);
}

// ---------------------------------------------------------------------------
// 9-11. Protocol, determinism, file format

std::vector<EnvelopeTrial> metadata_trials(int n_subjects) {
    std::vector<EnvelopeTrial> out;
    for (int s = 0; s < n_subjects; ++s) {
        for (int b = 0; b < 15; ++b) {
            for (int w = 0; w < kNumWords; ++w) out.push_back({MatrixD(1, 1), w, b, s});
        }
    }
    return out;
}

Outcome protocol() {
    Outcome o;
    const auto one = metadata_trials(1);
    std::set<int> test_blocks_seen;
    for (int fold = 0; fold < kWithinFolds; ++fold) {
        const auto plan = split_within(one, fold, 3);
        const auto tr = plan.indices(Partition::Train), va = plan.indices(Partition::Val),
                   te = plan.indices(Partition::Test);
        if (tr.size() != 480 || va.size() != 96 || te.size() != 144) o.pass = false;
        std::set<int> bt, bv, be;
        for (auto i : tr) bt.insert(one[i].block);
        for (auto i : va) bv.insert(one[i].block);
        for (auto i : te) be.insert(one[i].block), test_blocks_seen.insert(one[i].block);
        for (int b : bt) {
            if (bv.count(b) || be.count(b)) o.pass = false;
        }
        for (int b : bv) {
            if (be.count(b)) o.pass = false;
        }
    }
    if (test_blocks_seen.size() != 15) o.pass = false;  // test folds tile the blocks

    const auto nine = metadata_trials(9);
    bool loso_ok = true;
    for (int held = 0; held < 9; ++held) {
        const auto plan = split_cross(nine, held, 4);
        const auto te = plan.indices(Partition::Test);
        loso_ok = loso_ok && plan.indices(Partition::Train).size() == 5040 &&
                  plan.indices(Partition::Val).size() == 720 && te.size() == 720 &&
                  std::all_of(te.begin(), te.end(), [&](auto i) { return nine[i].subject == held; });
    }
    o.pass = o.pass && loso_ok;
    o.detail = "within (480, 96, 144) block-disjoint over 5 folds, LOSO (5040, 720, 720) over 9 subjects";
    return o;
}

Outcome determinism() {
    auto synth = desk_synth(TemplateMode::ClassStructured, 0.0, 1.0);
    const auto p = prepare(synth);
    auto s = desk_spec(scratch("det_a"), 2);
    s.approach = Approach::Masd;
    s.text_emb = s.speech_emb = "pseudo";
    s.augment = true;
    s.train.max_epochs = 3;
    run_training(s, p.trials, p.corpus, p.tables);
    const auto a = slurp(fs::path(s.out) / "results.csv");
    fs::remove_all(s.out);
    s.out = scratch("det_b").string();
    run_training(s, p.trials, p.corpus, p.tables);
    const auto b = slurp(fs::path(s.out) / "results.csv");
    fs::remove_all(s.out);
    Outcome o;
    o.pass = !a.empty() && a == b;
    o.detail = std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different");
    return o;
}

Outcome round_trip() {
    auto cfg = desk_synth(TemplateMode::Separable, 0.0, 0.0).config;
    const auto ds = generate(cfg, Corpus::bundled());
    const auto dir = scratch("dataset");
    const auto t0 = std::chrono::steady_clock::now();
    write_dataset(ds, dir.string());
    const auto back = read_dataset(dir.string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool same = back.trials.size() == ds.trials.size() && back.fs == ds.fs && back.channels == ds.channels &&
                back.samples == ds.samples && ds.trials.size() == 720;
    for (std::size_t i = 0; same && i < ds.trials.size(); ++i) {
        const auto& a = ds.trials[i];
        const auto& b = back.trials[i];
        same = a.word_id == b.word_id && a.block == b.block && a.subject == b.subject &&
               a.data.size() == b.data.size() &&
               std::memcmp(a.data.data().data(), b.data.data().data(), a.data.size() * sizeof(float)) == 0;
    }
    fs::remove_all(dir);
    Outcome o;
    o.pass = same;
    o.detail = std::to_string(ds.trials.size()) + " trials x " + std::to_string(ds.channels) + " channels, " +
               (same ? "bitwise identical" : "mismatch") + ", write+read " + fmt("%.2f", secs) + " s";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "dsp oracles", 10, dsp_oracles},
        {2, "gradient correctness", 30, gradients},
        {3, "infonce closed forms", 5, info_nce_forms},
        {4, "noise statistics", 30, noise_statistics},
        {5, "chance-level calibration", 300, chance_level},
        {6, "learnability", 300, learnability},
        {7, "masd directional benefit", 1200, masd_benefit},
        {8, "augmentation directional benefit", 1200, augmentation_benefit},
        {9, "protocol exactness", 1, protocol},
        {10, "determinism", 600, determinism},
        {11, "dataset round trip", 5, round_trip},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs < c.budget_s;
        failures += !pass;
        std::printf("%s [%d] %s: %s; %.1f s (budget %.0f s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                    o.detail.c_str(), secs, c.budget_s);
        std::fflush(stdout);
    }
    fs::remove_all(fs::temp_directory_path() / ("masd_accept_" + std::to_string(::getpid())));
    return failures == 0 ? 0 : 1;
}
