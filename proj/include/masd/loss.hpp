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
#include <span>
#include <string>
#include <vector>

#include "masd/common.hpp"

namespace masd {

/// Weights of the combined objective ce + lambda_t * L_t + lambda_s * L_s.
struct LossConfig {
    double tau = 0.01;
    double lambda_t = 1.0;
    double lambda_s = 1.0;
};

inline std::vector<std::string> validate(const LossConfig& cfg, const std::string& prefix = "loss") {
    std::vector<std::string> out;
    if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) out.push_back(prefix + ".tau must be > 0");
    if (!(cfg.lambda_t >= 0.0) || !std::isfinite(cfg.lambda_t)) out.push_back(prefix + ".lambda_t must be >= 0");
    if (!(cfg.lambda_s >= 0.0) || !std::isfinite(cfg.lambda_s)) out.push_back(prefix + ".lambda_s must be >= 0");
    return out;
}

namespace detail {

inline std::vector<double> row_norms(const MatrixD& m, const char* who) {
    std::vector<double> n(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (double v : m.row(i)) s += v * v;
        n[i] = std::sqrt(s);
        if (!(n[i] > 0.0)) throw InvalidArgument(std::string(who) + ": zero-norm row " + std::to_string(i));
    }
    return n;
}

}  // namespace detail

/// Entry (i, j) is the cosine of row i of `a` and row j of `b`.
inline MatrixD cosine_sim_matrix(const MatrixD& a, const MatrixD& b) {
    if (a.cols() != b.cols()) throw InvalidArgument("cosine_sim_matrix: feature dims differ");
    const auto na = detail::row_norms(a, "cosine_sim_matrix");
    const auto nb = detail::row_norms(b, "cosine_sim_matrix");
    MatrixD s(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto bj = b.row(j);
            double dot = 0.0;
            for (std::size_t k = 0; k < ai.size(); ++k) dot += ai[k] * bj[k];
            s(i, j) = std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0);
        }
    }
    return s;
}

/// Brain-anchored InfoNCE: row i of `zm` is the positive for row i of `zb`
/// and every other row of the batch is a negative, duplicates included.
/// When `grad_zb` is given it receives dL/dzb.
inline double info_nce(const MatrixD& zb, const MatrixD& zm, double tau, MatrixD* grad_zb = nullptr) {
    if (!(tau > 0.0)) throw InvalidArgument("info_nce: tau must be > 0");
    if (zb.rows() != zm.rows() || zb.cols() != zm.cols()) throw InvalidArgument("info_nce: shape mismatch");
    const std::size_t n = zb.rows(), d = zb.cols();
    if (n == 0) throw InvalidArgument("info_nce: empty batch");
    const auto nb = detail::row_norms(zb, "info_nce");
    const auto nm = detail::row_norms(zm, "info_nce");
    MatrixD u(n, d), v(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            u(i, k) = zb(i, k) / nb[i];
            v(i, k) = zm(i, k) / nm[i];
        }
    }
    MatrixD logits(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += u(i, k) * v(j, k);
            logits(i, j) = dot / tau;
        }
    }
    double loss = 0.0;
    MatrixD p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            p(i, j) = std::exp(row[j] - m);
            z += p(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) p(i, j) /= z;
        loss += (m - row[i]) + std::log(z);
    }
    loss /= static_cast<double>(n);

    if (grad_zb != nullptr) {
        *grad_zb = MatrixD(n, d);
        std::vector<double> gu(d);
        for (std::size_t i = 0; i < n; ++i) {
            std::fill(gu.begin(), gu.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double gs = (p(i, j) - (i == j ? 1.0 : 0.0)) / (static_cast<double>(n) * tau);
                for (std::size_t k = 0; k < d; ++k) gu[k] += gs * v(j, k);
            }
            // Project out the radial component of the normalization.
            double radial = 0.0;
            for (std::size_t k = 0; k < d; ++k) radial += gu[k] * u(i, k);
            for (std::size_t k = 0; k < d; ++k) (*grad_zb)(i, k) = (gu[k] - radial * u(i, k)) / nb[i];
        }
    }
    return loss;
}

/// Mean negative log-softmax of the labelled class. `grad` receives dL/dlogits.
inline double cross_entropy(const MatrixD& logits, std::span<const int> labels, MatrixD* grad = nullptr) {
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n) throw InvalidArgument("cross_entropy: label count does not match batch");
    if (n == 0) throw InvalidArgument("cross_entropy: empty batch");
    if (grad != nullptr) *grad = MatrixD(n, k);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " out of range");
        }
        const auto row = logits.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - m);
        loss += m + std::log(z) - row[static_cast<std::size_t>(y)];
        if (grad != nullptr) {
            for (std::size_t j = 0; j < k; ++j) {
                (*grad)(i, j) = (std::exp(row[j] - m) / z - (static_cast<int>(j) == y ? 1.0 : 0.0)) /
                                static_cast<double>(n);
            }
        }
    }
    return loss / static_cast<double>(n);
}

inline double total_loss(double ce, double lt, double ls, const LossConfig& cfg) {
    return ce + cfg.lambda_t * lt + cfg.lambda_s * ls;
}

}  // namespace masd
