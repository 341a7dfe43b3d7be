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
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "masd/common.hpp"
#include "masd/loss.hpp"

// Minimal reverse-mode engine. Nodes produced by an op are recorded on a
// Tape in creation order; backward() walks the tape in reverse. Parameters
// are leaf nodes that live outside the tape and accumulate gradients until
// they are explicitly zeroed.
namespace masd::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> backward;

    std::size_t size() const noexcept { return value.size(); }
};

using Var = std::shared_ptr<TensorNode>;

inline Var make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel(shape) != value.size()) throw InvalidArgument("tensor: value size does not match shape");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), 0.0);
    return n;
}

inline Var constant(Shape shape, std::vector<double> value) { return make_leaf(std::move(shape), std::move(value), false); }

inline Var parameter(Shape shape, std::vector<double> value) { return make_leaf(std::move(shape), std::move(value), true); }

class Tape {
public:
    /// Disables recording; ops then produce constants. Used for inference.
    void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Creates an op output. `inputs_need_grad` tells whether any input is
    /// differentiable; the backward closure is attached by the caller.
    Var output(Shape shape, bool inputs_need_grad) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value.assign(numel(n->shape), 0.0);
        n->requires_grad = grad_enabled_ && inputs_need_grad;
        if (n->requires_grad) {
            n->grad.assign(n->value.size(), 0.0);
            nodes_.push_back(n);
        }
        return n;
    }

    /// Accumulates d(loss)/d(x) into every reachable differentiable node.
    void backward(const Var& loss) {
        if (backward_done_) throw Error("autograd: backward called twice without reset");
        if (loss->size() != 1) throw InvalidArgument("autograd: loss must be a scalar, got " + shape_str(loss->shape));
        backward_done_ = true;
        if (!loss->requires_grad) return;
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if ((*it)->backward) (*it)->backward();
        }
    }

    /// Drops recorded nodes so the next step starts a fresh graph.
    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    std::vector<Var> nodes_;
    bool grad_enabled_ = true;
    bool backward_done_ = false;
};

inline void expect_shape(const Var& x, std::size_t rank, const char* who) {
    if (x->shape.size() != rank) {
        throw InvalidArgument(std::string(who) + ": expected rank " + std::to_string(rank) + ", got " +
                              shape_str(x->shape));
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Var mul(Tape& tape, const Var& a, const Var& b) {
    if (a->shape != b->shape) throw InvalidArgument("mul: shape mismatch");
    auto y = tape.output(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] * b->value[i];
    if (y->requires_grad) {
        y->backward = [a, b, y = y.get()] {
            for (std::size_t i = 0; i < y->size(); ++i) {
                if (a->requires_grad) a->grad[i] += y->grad[i] * b->value[i];
                if (b->requires_grad) b->grad[i] += y->grad[i] * a->value[i];
            }
        };
    }
    return y;
}

inline Var sum(Tape& tape, const Var& a) {
    auto y = tape.output({1}, a->requires_grad);
    y->value[0] = std::accumulate(a->value.begin(), a->value.end(), 0.0);
    if (y->requires_grad) {
        y->backward = [a, y = y.get()] {
            for (double& g : a->grad) g += y->grad[0];
        };
    }
    return y;
}

/// Scalar sum_i w_i * x_i over scalar nodes.
inline Var weighted_sum(Tape& tape, const std::vector<Var>& xs, const std::vector<double>& w) {
    if (xs.size() != w.size()) throw InvalidArgument("weighted_sum: size mismatch");
    bool need = false;
    for (const auto& x : xs) {
        if (x->size() != 1) throw InvalidArgument("weighted_sum: inputs must be scalars");
        need = need || x->requires_grad;
    }
    auto y = tape.output({1}, need);
    for (std::size_t i = 0; i < xs.size(); ++i) y->value[0] += w[i] * xs[i]->value[0];
    if (y->requires_grad) {
        y->backward = [xs, w, y = y.get()] {
            for (std::size_t i = 0; i < xs.size(); ++i) {
                if (xs[i]->requires_grad) xs[i]->grad[0] += w[i] * y->grad[0];
            }
        };
    }
    return y;
}

inline Var elu(Tape& tape, const Var& x) {
    auto y = tape.output(x->shape, x->requires_grad);
    for (std::size_t i = 0; i < y->size(); ++i) {
        const double v = x->value[i];
        y->value[i] = v > 0.0 ? v : std::expm1(v);
    }
    if (y->requires_grad) {
        y->backward = [x, y = y.get()] {
            for (std::size_t i = 0; i < y->size(); ++i) {
                const double v = x->value[i];
                x->grad[i] += y->grad[i] * (v > 0.0 ? 1.0 : y->value[i] + 1.0);
            }
        };
    }
    return y;
}

/// Inverted dropout: kept units are scaled by 1/(1-p).
inline Var dropout(Tape& tape, const Var& x, double p, bool training, std::mt19937_64& rng) {
    if (!training || p <= 0.0) return x;
    auto y = tape.output(x->shape, x->requires_grad);
    std::vector<double> mask(x->size());
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = keep(rng) ? scale : 0.0;
        y->value[i] = x->value[i] * mask[i];
    }
    if (y->requires_grad) {
        y->backward = [x, mask = std::move(mask), y = y.get()] {
            for (std::size_t i = 0; i < mask.size(); ++i) x->grad[i] += y->grad[i] * mask[i];
        };
    }
    return y;
}

/// Reinterprets the shape; values and gradients are shared element-for-element.
inline Var reshape(Tape& tape, const Var& x, Shape shape) {
    if (numel(shape) != x->size()) throw InvalidArgument("reshape: element count changes");
    auto y = tape.output(std::move(shape), x->requires_grad);
    y->value = x->value;
    if (y->requires_grad) {
        y->backward = [x, y = y.get()] {
            for (std::size_t i = 0; i < y->size(); ++i) x->grad[i] += y->grad[i];
        };
    }
    return y;
}

/// Concatenates two [B x n] matrices along the feature axis.
inline Var concat_cols(Tape& tape, const Var& a, const Var& b) {
    expect_shape(a, 2, "concat_cols");
    expect_shape(b, 2, "concat_cols");
    if (a->shape[0] != b->shape[0]) throw InvalidArgument("concat_cols: batch sizes differ");
    const std::size_t n = a->shape[0], na = a->shape[1], nb = b->shape[1];
    auto y = tape.output({n, na + nb}, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a->value.begin() + i * na, na, y->value.begin() + i * (na + nb));
        std::copy_n(b->value.begin() + i * nb, nb, y->value.begin() + i * (na + nb) + na);
    }
    if (y->requires_grad) {
        y->backward = [a, b, n, na, nb, y = y.get()] {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < na; ++k) {
                    if (a->requires_grad) a->grad[i * na + k] += y->grad[i * (na + nb) + k];
                }
                for (std::size_t k = 0; k < nb; ++k) {
                    if (b->requires_grad) b->grad[i * nb + k] += y->grad[i * (na + nb) + na + k];
                }
            }
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// Layers. Activations are [B x channels x length] unless stated otherwise.

/// y = x W^T + b for x [B x in], W [out x in], b [out].
inline Var linear(Tape& tape, const Var& x, const Var& w, const Var& b) {
    expect_shape(x, 2, "linear");
    const std::size_t n = x->shape[0], in = x->shape[1], out = w->shape[0];
    if (w->shape != Shape{out, in} || b->shape != Shape{out}) {
        throw InvalidArgument("linear: weight " + shape_str(w->shape) + " does not fit input " + shape_str(x->shape));
    }
    auto y = tape.output({n, out}, x->requires_grad || w->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x->value.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w->value.data() + o * in;
            double acc = b->value[o];
            for (std::size_t k = 0; k < in; ++k) acc += wo[k] * xi[k];
            y->value[i * out + o] = acc;
        }
    }
    if (y->requires_grad) {
        y->backward = [x, w, b, n, in, out, y = y.get()] {
            for (std::size_t i = 0; i < n; ++i) {
                const double* xi = x->value.data() + i * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = y->grad[i * out + o];
                    if (g == 0.0) continue;
                    if (b->requires_grad) b->grad[o] += g;
                    if (w->requires_grad) {
                        double* gw = w->grad.data() + o * in;
                        for (std::size_t k = 0; k < in; ++k) gw[k] += g * xi[k];
                    }
                    if (x->requires_grad) {
                        const double* wo = w->value.data() + o * in;
                        double* gx = x->grad.data() + i * in;
                        for (std::size_t k = 0; k < in; ++k) gx[k] += g * wo[k];
                    }
                }
            }
        };
    }
    return y;
}

namespace detail {

// 'same' zero padding for a length-K kernel: output t reads input t + k - left.
inline std::size_t left_pad(std::size_t k) { return (k - 1) / 2; }

// y[t] += sum_k w[k] * z[t + k - left], restricted to valid indices.
inline void correlate_same(const double* z, const double* w, std::size_t len, std::size_t kernel, double* y) {
    const auto left = static_cast<std::ptrdiff_t>(left_pad(kernel));
    const auto n = static_cast<std::ptrdiff_t>(len);
    for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - left;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - off);
        const double wk = w[k];
        for (std::ptrdiff_t t = t0; t < t1; ++t) y[t] += wk * z[t + off];
    }
}

// Adjoint of correlate_same: accumulates dL/dw into gw and dL/dz into gz.
inline void correlate_same_backward(const double* z, const double* w, const double* gy, std::size_t len,
                                    std::size_t kernel, double* gw, double* gz) {
    const auto left = static_cast<std::ptrdiff_t>(left_pad(kernel));
    const auto n = static_cast<std::ptrdiff_t>(len);
    for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - left;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - off);
        const double wk = w[k];
        double acc = 0.0;
        for (std::ptrdiff_t t = t0; t < t1; ++t) {
            acc += gy[t] * z[t + off];
            if (gz != nullptr) gz[t + off] += wk * gy[t];
        }
        if (gw != nullptr) gw[k] += acc;
    }
}

}  // namespace detail

/// Temporal convolution (F filters, length K, 'same' padding) followed by a
/// depthwise spatial convolution giving D maps per temporal filter, each a
/// weighted sum over the C input channels of that filter's output.
///
/// Both stages are linear and act on different axes, so they commute: the
/// spatial sum is taken first and only F*D temporal convolutions are run
/// instead of F*C.
///
/// x [B x C x T], temporal [F x K], spatial [F*D x C] -> [B x F*D x T].
inline Var temporal_spatial_conv(Tape& tape, const Var& x, const Var& temporal, const Var& spatial) {
    expect_shape(x, 3, "temporal_spatial_conv");
    const std::size_t n = x->shape[0], c = x->shape[1], t = x->shape[2];
    const std::size_t f = temporal->shape[0], k = temporal->shape[1], fd = spatial->shape[0];
    if (spatial->shape[1] != c || fd % f != 0) {
        throw InvalidArgument("temporal_spatial_conv: spatial weight " + shape_str(spatial->shape) +
                              " does not fit input " + shape_str(x->shape));
    }
    const std::size_t depth = fd / f;
    auto y = tape.output({n, fd, t}, x->requires_grad || temporal->requires_grad || spatial->requires_grad);
    std::vector<double> z(n * fd * t, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t m = 0; m < fd; ++m) {
            double* zm = z.data() + (b * fd + m) * t;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double w = spatial->value[m * c + ch];
                const double* xc = x->value.data() + (b * c + ch) * t;
                for (std::size_t i = 0; i < t; ++i) zm[i] += w * xc[i];
            }
            detail::correlate_same(zm, temporal->value.data() + (m / depth) * k, t, k,
                                   y->value.data() + (b * fd + m) * t);
        }
    }
    if (y->requires_grad) {
        y->backward = [x, temporal, spatial, z = std::move(z), n, c, t, k, fd, depth, y = y.get()] {
            std::vector<double> gz(t);
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t m = 0; m < fd; ++m) {
                    std::fill(gz.begin(), gz.end(), 0.0);
                    const std::size_t filt = m / depth;
                    detail::correlate_same_backward(
                        z.data() + (b * fd + m) * t, temporal->value.data() + filt * k,
                        y->grad.data() + (b * fd + m) * t, t, k,
                        temporal->requires_grad ? temporal->grad.data() + filt * k : nullptr, gz.data());
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double* xc = x->value.data() + (b * c + ch) * t;
                        if (spatial->requires_grad) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < t; ++i) acc += gz[i] * xc[i];
                            spatial->grad[m * c + ch] += acc;
                        }
                        if (x->requires_grad) {
                            const double w = spatial->value[m * c + ch];
                            double* gx = x->grad.data() + (b * c + ch) * t;
                            for (std::size_t i = 0; i < t; ++i) gx[i] += w * gz[i];
                        }
                    }
                }
            }
        };
    }
    return y;
}

/// Per-channel temporal convolution, 'same' padding. x [B x M x L], w [M x K].
inline Var depthwise_conv(Tape& tape, const Var& x, const Var& w) {
    expect_shape(x, 3, "depthwise_conv");
    const std::size_t n = x->shape[0], m = x->shape[1], len = x->shape[2], k = w->shape[1];
    if (w->shape[0] != m) throw InvalidArgument("depthwise_conv: weight rows must equal channels");
    auto y = tape.output(x->shape, x->requires_grad || w->requires_grad);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < m; ++ch) {
            detail::correlate_same(x->value.data() + (b * m + ch) * len, w->value.data() + ch * k, len, k,
                                   y->value.data() + (b * m + ch) * len);
        }
    }
    if (y->requires_grad) {
        y->backward = [x, w, n, m, len, k, y = y.get()] {
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t ch = 0; ch < m; ++ch) {
                    const std::size_t off = (b * m + ch) * len;
                    detail::correlate_same_backward(x->value.data() + off, w->value.data() + ch * k,
                                                    y->grad.data() + off, len, k,
                                                    w->requires_grad ? w->grad.data() + ch * k : nullptr,
                                                    x->requires_grad ? x->grad.data() + off : nullptr);
                }
            }
        };
    }
    return y;
}

/// 1x1 channel mixing. x [B x M x L], w [O x M] -> [B x O x L].
inline Var pointwise_conv(Tape& tape, const Var& x, const Var& w) {
    expect_shape(x, 3, "pointwise_conv");
    const std::size_t n = x->shape[0], m = x->shape[1], len = x->shape[2], out = w->shape[0];
    if (w->shape[1] != m) throw InvalidArgument("pointwise_conv: weight columns must equal channels");
    auto y = tape.output({n, out, len}, x->requires_grad || w->requires_grad);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < out; ++o) {
            double* yo = y->value.data() + (b * out + o) * len;
            for (std::size_t ch = 0; ch < m; ++ch) {
                const double wv = w->value[o * m + ch];
                const double* xc = x->value.data() + (b * m + ch) * len;
                for (std::size_t i = 0; i < len; ++i) yo[i] += wv * xc[i];
            }
        }
    }
    if (y->requires_grad) {
        y->backward = [x, w, n, m, len, out, y = y.get()] {
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t o = 0; o < out; ++o) {
                    const double* go = y->grad.data() + (b * out + o) * len;
                    for (std::size_t ch = 0; ch < m; ++ch) {
                        const double* xc = x->value.data() + (b * m + ch) * len;
                        if (w->requires_grad) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < len; ++i) acc += go[i] * xc[i];
                            w->grad[o * m + ch] += acc;
                        }
                        if (x->requires_grad) {
                            const double wv = w->value[o * m + ch];
                            double* gx = x->grad.data() + (b * m + ch) * len;
                            for (std::size_t i = 0; i < len; ++i) gx[i] += wv * go[i];
                        }
                    }
                }
            }
        };
    }
    return y;
}

/// Non-overlapping mean pooling over the last axis; a trailing remainder is dropped.
inline Var avg_pool(Tape& tape, const Var& x, std::size_t p) {
    expect_shape(x, 3, "avg_pool");
    const std::size_t rows = x->shape[0] * x->shape[1], len = x->shape[2], out = len / p;
    if (p < 1 || out < 1) throw InvalidArgument("avg_pool: window larger than input");
    auto y = tape.output({x->shape[0], x->shape[1], out}, x->requires_grad);
    const double inv = 1.0 / static_cast<double>(p);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < p; ++i) acc += x->value[r * len + o * p + i];
            y->value[r * out + o] = acc * inv;
        }
    }
    if (y->requires_grad) {
        y->backward = [x, rows, len, out, p, inv, y = y.get()] {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = y->grad[r * out + o] * inv;
                    for (std::size_t i = 0; i < p; ++i) x->grad[r * len + o * p + i] += g;
                }
            }
        };
    }
    return y;
}

/// Running statistics of one batch-standardization layer.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> var;
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

/// Per-channel standardization over (batch, length) followed by a learned
/// affine map. Training mode uses batch statistics and updates `stats`;
/// evaluation mode uses the frozen running statistics.
inline Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, NormStats& stats,
                      bool training) {
    expect_shape(x, 3, "batch_norm");
    const std::size_t n = x->shape[0], m = x->shape[1], len = x->shape[2];
    if (gamma->size() != m || beta->size() != m || stats.mean.size() != m) {
        throw InvalidArgument("batch_norm: parameter size does not match channels");
    }
    const std::size_t count = n * len;
    std::vector<double> mu(m), inv_sd(m);
    for (std::size_t ch = 0; ch < m; ++ch) {
        if (training) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* r = x->value.data() + (b * m + ch) * len;
                for (std::size_t i = 0; i < len; ++i) s += r[i];
            }
            const double mean = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* r = x->value.data() + (b * m + ch) * len;
                for (std::size_t i = 0; i < len; ++i) ss += (r[i] - mean) * (r[i] - mean);
            }
            const double var = ss / static_cast<double>(count);
            mu[ch] = mean;
            inv_sd[ch] = 1.0 / std::sqrt(var + kNormEps);
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            stats.mean[ch] = (1.0 - kNormMomentum) * stats.mean[ch] + kNormMomentum * mean;
            stats.var[ch] = (1.0 - kNormMomentum) * stats.var[ch] + kNormMomentum * unbiased;
        } else {
            mu[ch] = stats.mean[ch];
            inv_sd[ch] = 1.0 / std::sqrt(stats.var[ch] + kNormEps);
        }
    }
    auto y = tape.output(x->shape, x->requires_grad || gamma->requires_grad || beta->requires_grad);
    std::vector<double> xhat(x->size());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < m; ++ch) {
            const std::size_t off = (b * m + ch) * len;
            for (std::size_t i = 0; i < len; ++i) {
                xhat[off + i] = (x->value[off + i] - mu[ch]) * inv_sd[ch];
                y->value[off + i] = gamma->value[ch] * xhat[off + i] + beta->value[ch];
            }
        }
    }
    if (y->requires_grad) {
        y->backward = [x, gamma, beta, xhat = std::move(xhat), inv_sd = std::move(inv_sd), n, m, len, count,
                       training, y = y.get()] {
            for (std::size_t ch = 0; ch < m; ++ch) {
                double sg = 0.0, sgx = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * m + ch) * len;
                    for (std::size_t i = 0; i < len; ++i) {
                        sg += y->grad[off + i];
                        sgx += y->grad[off + i] * xhat[off + i];
                    }
                }
                if (gamma->requires_grad) gamma->grad[ch] += sgx;
                if (beta->requires_grad) beta->grad[ch] += sg;
                if (!x->requires_grad) continue;
                const double scale = gamma->value[ch] * inv_sd[ch];
                const double mg = sg / static_cast<double>(count), mgx = sgx / static_cast<double>(count);
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * m + ch) * len;
                    for (std::size_t i = 0; i < len; ++i) {
                        const double g = y->grad[off + i];
                        x->grad[off + i] += training ? scale * (g - mg - xhat[off + i] * mgx) : scale * g;
                    }
                }
            }
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// Losses

inline MatrixD as_matrix(const Var& x) {
    expect_shape(x, 2, "as_matrix");
    return MatrixD(x->shape[0], x->shape[1], x->value);
}

inline Var cross_entropy(Tape& tape, const Var& logits, std::span<const int> labels) {
    MatrixD grad;
    const double v = masd::cross_entropy(as_matrix(logits), labels, logits->requires_grad ? &grad : nullptr);
    auto y = tape.output({1}, logits->requires_grad);
    y->value[0] = v;
    if (y->requires_grad) {
        y->backward = [logits, grad = std::move(grad), y = y.get()] {
            for (std::size_t i = 0; i < grad.size(); ++i) logits->grad[i] += y->grad[0] * grad.data()[i];
        };
    }
    return y;
}

/// InfoNCE against frozen modality features `zm` (no gradient flows into them).
inline Var info_nce(Tape& tape, const Var& zb, const MatrixD& zm, double tau) {
    MatrixD grad;
    const double v = masd::info_nce(as_matrix(zb), zm, tau, zb->requires_grad ? &grad : nullptr);
    auto y = tape.output({1}, zb->requires_grad);
    y->value[0] = v;
    if (y->requires_grad) {
        y->backward = [zb, grad = std::move(grad), y = y.get()] {
            for (std::size_t i = 0; i < grad.size(); ++i) zb->grad[i] += y->grad[0] * grad.data()[i];
        };
    }
    return y;
}

}  // namespace masd::ag
