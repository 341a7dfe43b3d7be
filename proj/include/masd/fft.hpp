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

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "masd/common.hpp"

namespace masd::fft {

using Complex = std::complex<double>;

namespace detail {

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

template <typename T>
using AlignedBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
AlignedBuffer<T> aligned(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)));
    if (p == nullptr) throw std::bad_alloc();
    return AlignedBuffer<T>(p);
}

enum class Kind { Forward, Backward, R2C, C2R };

// Plans are created once per (kind, length) and executed through the
// new-array interface, which is safe to call concurrently. Planning itself
// is not thread-safe in FFTW, hence the lock.
class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(Kind kind, int n) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(kind, n);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        auto in = aligned<fftw_complex>(static_cast<std::size_t>(n));
        auto out = aligned<fftw_complex>(static_cast<std::size_t>(n));
        auto rin = aligned<double>(static_cast<std::size_t>(n));
        fftw_plan plan = nullptr;
        switch (kind) {
            case Kind::Forward:
                plan = fftw_plan_dft_1d(n, in.get(), out.get(), FFTW_FORWARD, FFTW_ESTIMATE);
                break;
            case Kind::Backward:
                plan = fftw_plan_dft_1d(n, in.get(), out.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
                break;
            case Kind::R2C:
                plan = fftw_plan_dft_r2c_1d(n, rin.get(), out.get(), FFTW_ESTIMATE);
                break;
            case Kind::C2R:
                plan = fftw_plan_dft_c2r_1d(n, in.get(), rin.get(), FFTW_ESTIMATE);
                break;
        }
        if (plan == nullptr) throw Error("fftw: failed to create plan");
        plans_.emplace(key, plan);
        return plan;
    }

    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<Kind, int>, fftw_plan> plans_;
};

}  // namespace detail

/// Unnormalized complex DFT. `inverse` uses the +i sign convention without
/// the 1/n factor.
inline std::vector<Complex> dft(std::span<const Complex> x, bool inverse = false) {
    const int n = static_cast<int>(x.size());
    if (n == 0) return {};
    auto plan = detail::PlanCache::instance().get(
        inverse ? detail::Kind::Backward : detail::Kind::Forward, n);
    auto in = detail::aligned<fftw_complex>(x.size());
    auto out = detail::aligned<fftw_complex>(x.size());
    std::memcpy(in.get(), x.data(), sizeof(fftw_complex) * x.size());
    fftw_execute_dft(plan, in.get(), out.get());
    std::vector<Complex> result(x.size());
    std::memcpy(static_cast<void*>(result.data()), out.get(), sizeof(fftw_complex) * x.size());
    return result;
}

/// Real-input DFT; returns the n/2+1 non-redundant bins.
inline std::vector<Complex> rfft(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n == 0) return {};
    auto plan = detail::PlanCache::instance().get(detail::Kind::R2C, n);
    const std::size_t nbins = x.size() / 2 + 1;
    auto in = detail::aligned<double>(x.size());
    auto out = detail::aligned<fftw_complex>(nbins);
    std::memcpy(in.get(), x.data(), sizeof(double) * x.size());
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    std::vector<Complex> result(nbins);
    std::memcpy(static_cast<void*>(result.data()), out.get(), sizeof(fftw_complex) * nbins);
    return result;
}

/// Inverse of rfft, normalized so that irfft(rfft(x), n) == x. The imaginary
/// parts of the DC and (even n) Nyquist bins are ignored.
inline std::vector<double> irfft(std::span<const Complex> bins, std::size_t n) {
    if (n == 0) return {};
    if (bins.size() != n / 2 + 1) throw InvalidArgument("irfft: bin count does not match length");
    auto plan = detail::PlanCache::instance().get(detail::Kind::C2R, static_cast<int>(n));
    auto in = detail::aligned<fftw_complex>(bins.size());
    auto out = detail::aligned<double>(n);
    std::memcpy(in.get(), bins.data(), sizeof(fftw_complex) * bins.size());
    fftw_execute_dft_c2r(plan, in.get(), out.get());
    std::vector<double> result(out.get(), out.get() + n);
    const double scale = 1.0 / static_cast<double>(n);
    for (double& v : result) v *= scale;
    return result;
}

}  // namespace masd::fft
