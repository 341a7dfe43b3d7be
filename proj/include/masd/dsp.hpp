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
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "masd/common.hpp"
#include "masd/fft.hpp"

namespace masd {

/// One multichannel recording as acquired (channels x raw samples).
struct RawTrial {
    MatrixF data;
    double fs = 1000.0;
    int word_id = 0;
    int block = 0;
    int subject = 0;
};

/// A preprocessed trial: Hilbert envelopes at the output rate.
struct EnvelopeTrial {
    MatrixD data;
    int word_id = 0;
    int block = 0;
    int subject = 0;
};

struct PreprocessConfig {
    double band_low = 70.0;
    double band_high = 170.0;
    int band_order = 4;
    double notch = 50.0;
    double notch_q = 30.0;
    double clamp = 5.0;
    double fs_out = 200.0;
    int antialias_order = 4;
};

namespace dsp {

/// Second-order section in transposed direct form II, a0 normalized to 1.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;
};

using Sos = std::vector<Biquad>;

/// Subtracts the least-squares line from `signal`.
inline std::vector<double> detrend(std::span<const double> signal) {
    const std::size_t n = signal.size();
    if (n < 2) throw InvalidArgument("detrend: need at least 2 samples");
    if (!all_finite(signal)) throw InvalidArgument("detrend: non-finite input");
    const double tm = (static_cast<double>(n) - 1.0) / 2.0;
    double ym = 0.0;
    for (double v : signal) ym += v;
    ym /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = static_cast<double>(i) - tm;
        sxy += dt * (signal[i] - ym);
        sxx += dt * dt;
    }
    const double slope = sxy / sxx;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = signal[i] - ym - slope * (static_cast<double>(i) - tm);
    }
    return out;
}

/// Common-average reference: subtracts the across-channel mean at every sample.
inline MatrixD rereference(const MatrixD& data) {
    if (data.rows() < 2) throw InvalidArgument("rereference: need at least 2 channels");
    MatrixD out = data;
    const double inv = 1.0 / static_cast<double>(data.rows());
    for (std::size_t t = 0; t < data.cols(); ++t) {
        double m = 0.0;
        for (std::size_t c = 0; c < data.rows(); ++c) m += data(c, t);
        m *= inv;
        for (std::size_t c = 0; c < data.rows(); ++c) out(c, t) -= m;
    }
    return out;
}

namespace detail {

using Cplx = std::complex<double>;

inline double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

inline Cplx bilinear(Cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

// Normalized Butterworth prototype poles in the upper half plane plus, for
// odd orders, the real pole at -1.
inline std::vector<Cplx> butter_prototype(int order) {
    std::vector<Cplx> poles;
    for (int k = 1; k <= order; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + order - 1.0) / (2.0 * order);
        const Cplx p = std::polar(1.0, theta);
        if (p.imag() > 1e-12) poles.push_back(p);
        else if (std::abs(p.imag()) <= 1e-12) poles.push_back({p.real(), 0.0});
    }
    return poles;
}

inline Biquad pole_pair_section(Cplx z) {
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    return s;
}

}  // namespace detail

/// Complex response of a cascade at frequency `f` Hz.
inline std::complex<double> frequency_response(const Sos& sos, double f, double fs) {
    const double w = 2.0 * std::numbers::pi * f / fs;
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h = 1.0;
    for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

inline void scale_gain(Sos& sos, double gain) {
    sos.front().b0 *= gain;
    sos.front().b1 *= gain;
    sos.front().b2 *= gain;
}

/// Digital Butterworth lowpass (bilinear transform, prewarped), unit DC gain.
inline Sos butter_lowpass(int order, double cutoff, double fs) {
    if (order < 1) throw InvalidArgument("butter_lowpass: order must be >= 1");
    if (!(cutoff > 0.0 && cutoff < fs / 2.0)) {
        throw InvalidArgument("butter_lowpass: cutoff must lie in (0, fs/2)");
    }
    const double wc = detail::prewarp(cutoff, fs);
    Sos sos;
    for (const auto& p : detail::butter_prototype(order)) {
        const auto z = detail::bilinear(p * wc, fs);
        Biquad s;
        if (p.imag() > 0.0) {
            s = detail::pole_pair_section(z);
            s.b0 = 1.0, s.b1 = 2.0, s.b2 = 1.0;
        } else {
            s.a1 = -z.real();
            s.b0 = 1.0, s.b1 = 1.0;
        }
        sos.push_back(s);
    }
    scale_gain(sos, 1.0 / std::abs(frequency_response(sos, 0.0, fs)));
    return sos;
}

/// Digital Butterworth bandpass of prototype order `order` (2*order poles),
/// unit gain at the geometric centre frequency.
inline Sos butter_bandpass(int order, double low, double high, double fs) {
    if (order < 1) throw InvalidArgument("butter_bandpass: order must be >= 1");
    if (!(low > 0.0 && low < high)) throw InvalidArgument("butter_bandpass: need 0 < low < high");
    if (!(high < fs / 2.0)) throw InvalidArgument("butter_bandpass: band edge >= Nyquist");
    const double w1 = detail::prewarp(low, fs);
    const double w2 = detail::prewarp(high, fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;
    Sos sos;
    auto add_pole = [&](detail::Cplx s) {
        if (std::abs(s.imag()) < 1e-9 * w0) {
            throw InvalidArgument("butter_bandpass: band too wide for this design");
        }
        if (s.imag() < 0.0) s = std::conj(s);
        auto sec = detail::pole_pair_section(detail::bilinear(s, fs));
        sec.b0 = 1.0, sec.b1 = 0.0, sec.b2 = -1.0;
        sos.push_back(sec);
    };
    for (const auto& p : detail::butter_prototype(order)) {
        const detail::Cplx half = p * bw / 2.0;
        const detail::Cplx root = std::sqrt(half * half - w0 * w0);
        add_pole(half + root);
        // A real prototype pole yields one conjugate pair; a complex one
        // yields two poles that are not conjugates of each other.
        if (p.imag() > 0.0) add_pole(half - root);
    }
    const double fc = fs / std::numbers::pi * std::atan(w0 / (2.0 * fs));
    scale_gain(sos, 1.0 / std::abs(frequency_response(sos, fc, fs)));
    return sos;
}

/// Second-order IIR notch at `f0` with quality factor `q`.
inline Biquad iir_notch(double f0, double q, double fs) {
    if (!(f0 > 0.0 && f0 < fs / 2.0)) throw InvalidArgument("iir_notch: frequency outside (0, fs/2)");
    if (!(q > 0.0)) throw InvalidArgument("iir_notch: q must be > 0");
    const double w0 = 2.0 * std::numbers::pi * f0 / fs;
    const double beta = std::tan(w0 / q / 2.0);
    const double gain = 1.0 / (1.0 + beta);
    Biquad s;
    s.b0 = gain;
    s.b1 = -2.0 * gain * std::cos(w0);
    s.b2 = gain;
    s.a1 = -2.0 * gain * std::cos(w0);
    s.a2 = 2.0 * gain - 1.0;
    return s;
}

/// Steady-state initial conditions of a cascade for a unit step input.
inline std::vector<std::array<double, 2>> sosfilt_zi(const Sos& sos) {
    std::vector<std::array<double, 2>> zi(sos.size());
    double input = 1.0;
    for (std::size_t i = 0; i < sos.size(); ++i) {
        const auto& s = sos[i];
        const double h = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        zi[i][1] = (s.b2 - s.a2 * h) * input;
        zi[i][0] = (s.b1 - s.a1 * h) * input + zi[i][1];
        input *= h;
    }
    return zi;
}

/// Causal cascade filtering; `zi` is scaled by `zi_scale` and used as initial state.
inline std::vector<double> sosfilt(const Sos& sos, std::span<const double> x,
                                   const std::vector<std::array<double, 2>>* zi = nullptr,
                                   double zi_scale = 0.0) {
    std::vector<double> y(x.begin(), x.end());
    for (std::size_t k = 0; k < sos.size(); ++k) {
        const auto& s = sos[k];
        double z1 = zi ? (*zi)[k][0] * zi_scale : 0.0;
        double z2 = zi ? (*zi)[k][1] * zi_scale : 0.0;
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

/// Zero-phase forward-backward filtering with odd-extension padding and
/// steady-state initial conditions.
inline std::vector<double> sosfiltfilt(const Sos& sos, std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) return {x.begin(), x.end()};
    const std::size_t pad = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    const auto zi = sosfilt_zi(sos);
    auto y = sosfilt(sos, ext, &zi, ext.front());
    std::reverse(y.begin(), y.end());
    y = sosfilt(sos, y, &zi, y.front());
    std::reverse(y.begin(), y.end());
    return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Band-pass plus mains notch cascade used by the preprocessing chain.
inline Sos bandpass_notch_design(double fs, const PreprocessConfig& cfg = {}) {
    if (!(cfg.band_high < fs / 2.0)) {
        throw InvalidArgument("bandpass_notch: band edge " + std::to_string(cfg.band_high) +
                              " Hz is not below Nyquist " + std::to_string(fs / 2.0) + " Hz");
    }
    Sos sos = butter_bandpass(cfg.band_order, cfg.band_low, cfg.band_high, fs);
    sos.push_back(iir_notch(cfg.notch, cfg.notch_q, fs));
    return sos;
}

inline MatrixD filter_rows(const Sos& sos, const MatrixD& data) {
    MatrixD out(data.rows(), data.cols());
    for (std::size_t c = 0; c < data.rows(); ++c) {
        const auto y = sosfiltfilt(sos, data.row(c));
        std::copy(y.begin(), y.end(), out.row(c).begin());
    }
    return out;
}

inline MatrixD bandpass_notch(const MatrixD& data, double fs, const PreprocessConfig& cfg = {}) {
    return filter_rows(bandpass_notch_design(fs, cfg), data);
}

/// Per-channel z-scoring followed by clipping to [-clamp, clamp].
/// Zero-variance channels become all zeros.
inline MatrixD scale_clamp(const MatrixD& data, double clamp) {
    if (!(clamp > 0.0)) throw InvalidArgument("scale_clamp: clamp must be > 0");
    MatrixD out(data.rows(), data.cols());
    for (std::size_t c = 0; c < data.rows(); ++c) {
        const auto row = data.row(c);
        const double m = mean(row);
        const double sd = stddev(row);
        if (sd == 0.0 || sd <= 1e-12 * std::abs(m)) continue;
        auto dst = out.row(c);
        for (std::size_t t = 0; t < row.size(); ++t) {
            dst[t] = std::clamp((row[t] - m) / sd, -clamp, clamp);
        }
    }
    return out;
}

/// Analytic signal by the frequency-domain method: negative-frequency bins
/// zeroed, positive bins doubled, DC and Nyquist kept.
inline std::vector<std::complex<double>> analytic_signal(std::span<const double> signal) {
    const std::size_t n = signal.size();
    if (!all_finite(signal)) throw InvalidArgument("hilbert: non-finite input");
    std::vector<std::complex<double>> x(signal.begin(), signal.end());
    auto spec = fft::dft(x);
    const std::size_t half = n / 2;
    for (std::size_t k = 1; k < n; ++k) {
        if (k < (n + 1) / 2) spec[k] *= 2.0;
        else if (!(n % 2 == 0 && k == half)) spec[k] = 0.0;
    }
    auto a = fft::dft(spec, true);
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= inv;
    return a;
}

inline std::vector<double> hilbert_envelope(std::span<const double> signal) {
    if (signal.size() < 4) throw InvalidArgument("hilbert_envelope: need at least 4 samples");
    const auto a = analytic_signal(signal);
    std::vector<double> env(a.size());
    std::transform(a.begin(), a.end(), env.begin(), [](auto v) { return std::abs(v); });
    return env;
}

inline int decimation_factor(double fs_in, double fs_out) {
    if (!(fs_out > 0.0 && fs_in >= fs_out)) throw InvalidArgument("downsample: need fs_in >= fs_out > 0");
    const double q = fs_in / fs_out;
    const double qr = std::round(q);
    if (std::abs(q - qr) > 1e-9 * q) {
        throw InvalidArgument("downsample: non-integer decimation factor " + std::to_string(q));
    }
    return static_cast<int>(qr);
}

/// Anti-alias lowpass (cutoff 0.8 * fs_out / 2, zero phase) then integer decimation.
inline MatrixD downsample(const MatrixD& data, double fs_in, double fs_out, int antialias_order = 4) {
    const int q = decimation_factor(fs_in, fs_out);
    if (q == 1) return data;
    const auto sos = butter_lowpass(antialias_order, 0.8 * fs_out / 2.0, fs_in);
    const std::size_t n_out = data.cols() / static_cast<std::size_t>(q);
    MatrixD out(data.rows(), n_out);
    for (std::size_t c = 0; c < data.rows(); ++c) {
        const auto y = sosfiltfilt(sos, data.row(c));
        for (std::size_t t = 0; t < n_out; ++t) out(c, t) = y[t * static_cast<std::size_t>(q)];
    }
    return out;
}

}  // namespace dsp

/// Full chain: detrend, common-average reference, band-pass + notch,
/// z-score + clamp, Hilbert envelope, downsample. Envelope values are
/// finally limited to the clamp bound.
inline EnvelopeTrial preprocess(const RawTrial& trial, const PreprocessConfig& cfg = {}) {
    const auto& raw = trial.data;
    if (raw.rows() < 1 || raw.cols() < 2) throw InvalidArgument("preprocess: empty trial");
    if (!(trial.fs > 2.0 * cfg.band_high)) {
        throw InvalidArgument("preprocess: fs " + std::to_string(trial.fs) +
                              " Hz puts the band edge above Nyquist");
    }
    if (!all_finite(raw.data())) throw InvalidArgument("preprocess: non-finite sample");

    MatrixD x(raw.rows(), raw.cols());
    for (std::size_t c = 0; c < raw.rows(); ++c) {
        std::vector<double> row(raw.row(c).begin(), raw.row(c).end());
        const auto d = dsp::detrend(row);
        std::copy(d.begin(), d.end(), x.row(c).begin());
    }
    x = dsp::rereference(x);
    x = dsp::bandpass_notch(x, trial.fs, cfg);
    x = dsp::scale_clamp(x, cfg.clamp);
    for (std::size_t c = 0; c < x.rows(); ++c) {
        const auto env = dsp::hilbert_envelope(x.row(c));
        std::copy(env.begin(), env.end(), x.row(c).begin());
    }
    x = dsp::downsample(x, trial.fs, cfg.fs_out, cfg.antialias_order);
    for (double& v : x.data()) v = std::min(v, cfg.clamp);
    return EnvelopeTrial{std::move(x), trial.word_id, trial.block, trial.subject};
}

}  // namespace masd
