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

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "masd/common.hpp"
#include "masd/dsp.hpp"
#include "masd/fft.hpp"

namespace masd {

using Rng = std::mt19937_64;

enum class NoiseKind { Gaussian, Poisson, Pink, SaltPepper };
enum class NoiseDomain { Time, Frequency };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::Gaussian: return "gaussian";
        case NoiseKind::Poisson: return "poisson";
        case NoiseKind::Pink: return "pink";
        case NoiseKind::SaltPepper: return "saltpepper";
    }
    return "unknown";
}

inline NoiseKind parse_noise_kind(std::string_view s) {
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "poisson") return NoiseKind::Poisson;
    if (s == "pink") return NoiseKind::Pink;
    if (s == "saltpepper") return NoiseKind::SaltPepper;
    throw InvalidArgument("unknown noise kind '" + std::string(s) + "'");
}

inline std::string to_string(NoiseDomain d) { return d == NoiseDomain::Time ? "time" : "freq"; }

inline NoiseDomain parse_noise_domain(std::string_view s) {
    if (s == "time") return NoiseDomain::Time;
    if (s == "freq" || s == "frequency") return NoiseDomain::Frequency;
    throw InvalidArgument("unknown noise domain '" + std::string(s) + "'");
}

/// Noise model parameters. Additive noise is scaled by `amplitude` times the
/// per-channel standard deviation of the trial being augmented.
struct NoiseConfig {
    NoiseKind kind = NoiseKind::SaltPepper;
    double mu = 0.0;
    double sigma = 1.0;
    double kappa = 4.0;
    double alpha = 1.0;
    double p_s = 0.05;
    double p_p = 0.05;
    double amplitude = 0.1;
    int copies = 1;
};

/// Field-path messages for every violated constraint; empty when valid.
inline std::vector<std::string> validate(const NoiseConfig& cfg, const std::string& prefix = "noise") {
    std::vector<std::string> out;
    auto bad = [&](const std::string& field, const std::string& what) {
        out.push_back(prefix + "." + field + " " + what);
    };
    if (cfg.kind == NoiseKind::Gaussian && !(cfg.sigma > 0.0)) bad("sigma", "must be > 0");
    if (cfg.kind == NoiseKind::Poisson && !(cfg.kappa > 0.0)) bad("kappa", "must be > 0");
    if (cfg.kind == NoiseKind::Pink && !(cfg.alpha > 0.0)) bad("alpha", "must be > 0");
    if (!(cfg.p_s >= 0.0 && cfg.p_s <= 1.0)) bad("p_s", "must lie in [0, 1]");
    if (!(cfg.p_p >= 0.0 && cfg.p_p <= 1.0)) bad("p_p", "must lie in [0, 1]");
    if (!(cfg.p_s + cfg.p_p <= 1.0)) bad("p_s", "+ p_p must be <= 1");
    if (!(cfg.amplitude >= 0.0) || !std::isfinite(cfg.amplitude)) bad("amplitude", "must be >= 0");
    if (cfg.copies < 0) bad("copies", "must be >= 0");
    if (!std::isfinite(cfg.mu)) bad("mu", "must be finite");
    return out;
}

inline void check(const NoiseConfig& cfg) {
    const auto v = validate(cfg);
    if (!v.empty()) throw InvalidArgument(v.front());
}

/// Pink noise by spectral shaping of white Gaussian noise: bin k is scaled by
/// k^(-alpha/2), DC removed, result standardized to zero mean, unit variance.
inline std::vector<double> pink_noise(std::size_t n, double alpha, Rng& rng) {
    std::normal_distribution<double> white;
    std::vector<double> x(n);
    for (auto& v : x) v = white(rng);
    if (n < 2) return std::vector<double>(n, 0.0);
    auto bins = fft::rfft(x);
    bins[0] = 0.0;
    for (std::size_t k = 1; k < bins.size(); ++k) bins[k] *= std::pow(static_cast<double>(k), -alpha / 2.0);
    auto y = fft::irfft(bins, n);
    const double m = mean(y);
    const double sd = stddev(y);
    for (auto& v : y) v = sd > 0.0 ? (v - m) / sd : 0.0;
    return y;
}

/// Draws `n` samples of an additive noise model (not salt-and-pepper).
/// Poisson samples are centred: Poisson(kappa) - kappa.
inline std::vector<double> sample_noise(const NoiseConfig& cfg, std::size_t n, Rng& rng) {
    check(cfg);
    if (n < 1) throw InvalidArgument("sample_noise: n must be >= 1");
    std::vector<double> out(n);
    switch (cfg.kind) {
        case NoiseKind::Gaussian: {
            std::normal_distribution<double> d(cfg.mu, cfg.sigma);
            for (auto& v : out) v = d(rng);
            break;
        }
        case NoiseKind::Poisson: {
            std::poisson_distribution<long long> d(cfg.kappa);
            for (auto& v : out) v = static_cast<double>(d(rng)) - cfg.kappa;
            break;
        }
        case NoiseKind::Pink:
            out = pink_noise(n, cfg.alpha, rng);
            break;
        case NoiseKind::SaltPepper:
            throw InvalidArgument("sample_noise: salt-and-pepper is not additive");
    }
    return out;
}

/// Each point independently becomes max(data) with probability p_s, min(data)
/// with probability p_p, and is otherwise unchanged.
inline std::vector<double> salt_pepper(std::span<const double> data, double p_s, double p_p, Rng& rng) {
    if (!(p_s >= 0.0 && p_p >= 0.0 && p_s + p_p <= 1.0)) {
        throw InvalidArgument("salt_pepper: invalid probabilities");
    }
    std::vector<double> out(data.begin(), data.end());
    if (data.empty()) return out;
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
    const double vmin = *lo, vmax = *hi;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : out) {
        const double r = u(rng);
        if (r < p_s) v = vmax;
        else if (r < p_s + p_p) v = vmin;
    }
    return out;
}

/// `copies` noisy versions of `trial`, noise added to the envelope directly.
inline std::vector<EnvelopeTrial> augment_time(const EnvelopeTrial& trial, const NoiseConfig& cfg, Rng& rng) {
    check(cfg);
    std::vector<EnvelopeTrial> out;
    out.reserve(static_cast<std::size_t>(cfg.copies));
    for (int copy = 0; copy < cfg.copies; ++copy) {
        EnvelopeTrial t = trial;
        for (std::size_t c = 0; c < t.data.rows(); ++c) {
            auto row = t.data.row(c);
            if (cfg.kind == NoiseKind::SaltPepper) {
                const auto y = salt_pepper(row, cfg.p_s, cfg.p_p, rng);
                std::copy(y.begin(), y.end(), row.begin());
            } else {
                const double scale = cfg.amplitude * stddev(row);
                const auto noise = sample_noise(cfg, row.size(), rng);
                for (std::size_t i = 0; i < row.size(); ++i) row[i] += scale * noise[i];
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Adds noise to the non-redundant half spectrum of one channel and returns
/// the real inverse transform. Additive noise is applied to real and
/// imaginary parts independently with scale amplitude * sd * sqrt(n/2);
/// salt-and-pepper replaces coefficient magnitudes and keeps phase. The DC
/// and (even n) Nyquist bins stay real, so the result is exactly real.
inline std::vector<double> perturb_spectrum(std::span<const double> row, const NoiseConfig& cfg, Rng& rng) {
    const std::size_t n = row.size();
    if (n < 2) return {row.begin(), row.end()};
    auto bins = fft::rfft(row);
    const std::size_t nb = bins.size();
    auto real_only = [&](std::size_t k) { return k == 0 || (n % 2 == 0 && k == nb - 1); };

    if (cfg.kind == NoiseKind::SaltPepper) {
        std::vector<double> mags(nb);
        for (std::size_t k = 0; k < nb; ++k) mags[k] = std::abs(bins[k]);
        const auto corrupted = salt_pepper(mags, cfg.p_s, cfg.p_p, rng);
        for (std::size_t k = 0; k < nb; ++k) {
            if (corrupted[k] == mags[k]) continue;
            if (real_only(k)) {
                bins[k] = std::copysign(corrupted[k], bins[k].real());
            } else {
                const double phase = mags[k] > 0.0 ? std::arg(bins[k]) : 0.0;
                bins[k] = std::polar(corrupted[k], phase);
            }
        }
    } else {
        const double scale = cfg.amplitude * stddev(row) * std::sqrt(static_cast<double>(n) / 2.0);
        const auto re = sample_noise(cfg, nb, rng);
        const auto im = sample_noise(cfg, nb, rng);
        for (std::size_t k = 0; k < nb; ++k) {
            bins[k] += std::complex<double>(scale * re[k], real_only(k) ? 0.0 : scale * im[k]);
        }
    }
    for (std::size_t k = 0; k < nb; ++k) {
        if (real_only(k)) bins[k].imag(0.0);
    }
    return fft::irfft(bins, n);
}

/// `copies` versions of `trial` with noise injected into the Fourier coefficients.
inline std::vector<EnvelopeTrial> augment_freq(const EnvelopeTrial& trial, const NoiseConfig& cfg, Rng& rng) {
    check(cfg);
    std::vector<EnvelopeTrial> out;
    out.reserve(static_cast<std::size_t>(cfg.copies));
    for (int copy = 0; copy < cfg.copies; ++copy) {
        EnvelopeTrial t = trial;
        for (std::size_t c = 0; c < t.data.rows(); ++c) {
            const auto y = perturb_spectrum(trial.data.row(c), cfg, rng);
            std::copy(y.begin(), y.end(), t.data.row(c).begin());
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Augments every trial with a generator seeded from (base_seed, trial index).
inline std::vector<EnvelopeTrial> augment_all(std::span<const EnvelopeTrial> trials, const NoiseConfig& cfg,
                                              NoiseDomain domain, std::uint64_t base_seed) {
    std::vector<EnvelopeTrial> out;
    out.reserve(trials.size() * static_cast<std::size_t>(std::max(cfg.copies, 0)));
    for (std::size_t i = 0; i < trials.size(); ++i) {
        Rng rng(derive_seed(base_seed, i));
        auto copies = domain == NoiseDomain::Time ? augment_time(trials[i], cfg, rng)
                                                  : augment_freq(trials[i], cfg, rng);
        for (auto& t : copies) out.push_back(std::move(t));
    }
    return out;
}

}  // namespace masd
