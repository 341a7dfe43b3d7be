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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "masd/autograd.hpp"
#include "masd/common.hpp"

namespace masd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct ModelConfig {
    int channels = 64;
    int samples = 320;
    int temporal_kernel = 100;
    int n_temporal_filters = 8;
    int depth_multiplier = 2;
    int separable_kernel = 16;
    int pool1 = 4;
    int pool2 = 8;
    double dropout_p = 0.25;
    int branch_dim_t = 64;
    int branch_dim_s = 64;
    int n_classes = 48;

    int maps() const noexcept { return n_temporal_filters * depth_multiplier; }
    int pooled_length() const noexcept { return samples / pool1 / pool2; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline std::vector<std::string> validate(const ModelConfig& c, const std::string& prefix = "model") {
    std::vector<std::string> out;
    auto positive = [&](int v, const char* name) {
        if (v < 1) out.push_back(prefix + "." + name + " must be >= 1");
    };
    positive(c.channels, "channels");
    positive(c.samples, "samples");
    positive(c.temporal_kernel, "temporal_kernel");
    positive(c.n_temporal_filters, "n_temporal_filters");
    positive(c.depth_multiplier, "depth_multiplier");
    positive(c.separable_kernel, "separable_kernel");
    positive(c.pool1, "pool1");
    positive(c.pool2, "pool2");
    positive(c.branch_dim_t, "branch_dim_t");
    positive(c.branch_dim_s, "branch_dim_s");
    positive(c.n_classes, "n_classes");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) out.push_back(prefix + ".dropout_p must lie in [0, 1)");
    if (out.empty() && c.pooled_length() < 1) out.push_back(prefix + ".samples too short for pool1 * pool2");
    return out;
}

enum class Mode { Train, Eval };

/// A named parameter and its position in the checkpoint order.
struct NamedParam {
    std::string name;
    ag::Var var;
};

/// One feature extractor: temporal conv, depthwise spatial conv, batch
/// standardization, ELU, pooling, dropout, separable conv (depthwise temporal
/// then pointwise), batch standardization, ELU, pooling, dropout, flatten and
/// a projection to `out_dim` features.
class Branch {
public:
    Branch(const ModelConfig& c, int out_dim, const std::string& name, std::mt19937_64& rng) : cfg_(c) {
        const auto f = static_cast<std::size_t>(c.n_temporal_filters);
        const auto fd = static_cast<std::size_t>(c.maps());
        const auto ch = static_cast<std::size_t>(c.channels);
        const auto k = static_cast<std::size_t>(c.temporal_kernel);
        const auto sk = static_cast<std::size_t>(c.separable_kernel);
        const auto flat = fd * static_cast<std::size_t>(c.pooled_length());
        const auto out = static_cast<std::size_t>(out_dim);
        temporal_ = glorot(rng, {f, k}, k, f * k);
        spatial_ = glorot(rng, {fd, ch}, ch, fd * ch);
        gamma1_ = ag::parameter({fd}, std::vector<double>(fd, 1.0));
        beta1_ = ag::parameter({fd}, std::vector<double>(fd, 0.0));
        sep_depth_ = glorot(rng, {fd, sk}, sk, fd * sk);
        sep_point_ = glorot(rng, {fd, fd}, fd, fd);
        gamma2_ = ag::parameter({fd}, std::vector<double>(fd, 1.0));
        beta2_ = ag::parameter({fd}, std::vector<double>(fd, 0.0));
        proj_w_ = glorot(rng, {out, flat}, flat, out);
        proj_b_ = ag::parameter({out}, std::vector<double>(out, 0.0));
        norm1_ = {std::vector<double>(fd, 0.0), std::vector<double>(fd, 1.0)};
        norm2_ = {std::vector<double>(fd, 0.0), std::vector<double>(fd, 1.0)};
        params_ = {{name + ".temporal", temporal_}, {name + ".spatial", spatial_},
                   {name + ".norm1.gamma", gamma1_}, {name + ".norm1.beta", beta1_},
                   {name + ".separable.depthwise", sep_depth_}, {name + ".separable.pointwise", sep_point_},
                   {name + ".norm2.gamma", gamma2_}, {name + ".norm2.beta", beta2_},
                   {name + ".proj.weight", proj_w_}, {name + ".proj.bias", proj_b_}};
    }

    ag::Var forward(ag::Tape& tape, const ag::Var& x, bool training, std::mt19937_64& rng) {
        const auto n = x->shape[0];
        auto h = ag::temporal_spatial_conv(tape, x, temporal_, spatial_);
        h = ag::batch_norm(tape, h, gamma1_, beta1_, norm1_, training);
        h = ag::elu(tape, h);
        h = ag::avg_pool(tape, h, static_cast<std::size_t>(cfg_.pool1));
        h = ag::dropout(tape, h, cfg_.dropout_p, training, rng);
        h = ag::depthwise_conv(tape, h, sep_depth_);
        h = ag::pointwise_conv(tape, h, sep_point_);
        h = ag::batch_norm(tape, h, gamma2_, beta2_, norm2_, training);
        h = ag::elu(tape, h);
        h = ag::avg_pool(tape, h, static_cast<std::size_t>(cfg_.pool2));
        h = ag::dropout(tape, h, cfg_.dropout_p, training, rng);
        h = ag::reshape(tape, h, {n, h->size() / n});
        return ag::linear(tape, h, proj_w_, proj_b_);
    }

    const std::vector<NamedParam>& parameters() const noexcept { return params_; }
    std::vector<std::vector<double>*> buffers() { return {&norm1_.mean, &norm1_.var, &norm2_.mean, &norm2_.var}; }
    std::size_t depthwise_parameter_count() const noexcept { return spatial_->size(); }

private:
    static ag::Var glorot(std::mt19937_64& rng, ag::Shape shape, std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        std::vector<double> v(ag::numel(shape));
        for (double& x : v) x = u(rng);
        return ag::parameter(std::move(shape), std::move(v));
    }

    ModelConfig cfg_;
    ag::Var temporal_, spatial_, gamma1_, beta1_, sep_depth_, sep_point_, gamma2_, beta2_, proj_w_, proj_b_;
    ag::NormStats norm1_, norm2_;
    std::vector<NamedParam> params_;
};

struct Features {
    ag::Var zt;
    ag::Var zs;
};

struct Forward {
    ag::Var zt;
    ag::Var zs;
    ag::Var logits;
};

/// Per-layer parameter counts.
struct ModelSummary {
    std::vector<std::pair<std::string, std::size_t>> layers;
    std::size_t branch_t = 0;
    std::size_t branch_s = 0;
    std::size_t head = 0;
    std::size_t depthwise = 0;
    std::size_t total = 0;

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& [name, n] : layers) os << name << ' ' << n << '\n';
        os << "branch_t " << branch_t << "\nbranch_s " << branch_s << "\nhead " << head << "\ntotal " << total
           << '\n';
        return os.str();
    }
};

/// Dual-branch feature extractor plus a linear head over the concatenated features.
class Model {
public:
    explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0)
        : cfg_(cfg), rng_(seed), branch_t_(checked(cfg), cfg.branch_dim_t, "branch_t", rng_),
          branch_s_(cfg, cfg.branch_dim_s, "branch_s", rng_) {
        const auto in = static_cast<std::size_t>(cfg.branch_dim_t + cfg.branch_dim_s);
        const auto out = static_cast<std::size_t>(cfg.n_classes);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        std::vector<double> w(in * out);
        for (double& x : w) x = u(rng_);
        head_w_ = ag::parameter({out, in}, std::move(w));
        head_b_ = ag::parameter({out}, std::vector<double>(out, 0.0));
        params_ = branch_t_.parameters();
        for (const auto& p : branch_s_.parameters()) params_.push_back(p);
        params_.push_back({"head.weight", head_w_});
        params_.push_back({"head.bias", head_b_});
    }

    // Parameters are shared nodes, so copies must be deep to be independent.
    Model(const Model& other) : Model(other.cfg_) { copy_state_from(other); }
    Model& operator=(const Model& other) {
        if (this != &other) {
            Model tmp(other);
            *this = std::move(tmp);
        }
        return *this;
    }
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    const ModelConfig& config() const noexcept { return cfg_; }
    Mode mode() const noexcept { return mode_; }
    void set_mode(Mode m) noexcept { mode_ = m; }

    /// Reseeds the dropout stream.
    void seed_dropout(std::uint64_t seed) { rng_.seed(seed); }

    Features forward_features(ag::Tape& tape, const ag::Var& batch) {
        check_batch(batch);
        const bool training = mode_ == Mode::Train;
        auto zt = branch_t_.forward(tape, batch, training, rng_);
        auto zs = branch_s_.forward(tape, batch, training, rng_);
        return {zt, zs};
    }

    Forward forward(ag::Tape& tape, const ag::Var& batch) {
        auto [zt, zs] = forward_features(tape, batch);
        auto logits = ag::linear(tape, ag::concat_cols(tape, zt, zs), head_w_, head_b_);
        return {zt, zs, logits};
    }

    ag::Var forward_logits(ag::Tape& tape, const ag::Var& batch) { return forward(tape, batch).logits; }

    /// Parameters in declaration (checkpoint) order.
    const std::vector<NamedParam>& parameters() const noexcept { return params_; }

    /// Non-trainable state: running statistics, in checkpoint order.
    std::vector<std::vector<double>*> buffers() {
        auto out = branch_t_.buffers();
        for (auto* b : branch_s_.buffers()) out.push_back(b);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var->size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.var->grad.begin(), p.var->grad.end(), 0.0);
    }

    ModelSummary summary() const {
        ModelSummary s;
        for (const auto& p : params_) {
            s.layers.emplace_back(p.name, p.var->size());
            if (p.name.starts_with("branch_t.")) s.branch_t += p.var->size();
            else if (p.name.starts_with("branch_s.")) s.branch_s += p.var->size();
            else s.head += p.var->size();
        }
        s.depthwise = branch_t_.depthwise_parameter_count();
        s.total = s.branch_t + s.branch_s + s.head;
        return s;
    }

    /// Flattened parameters followed by buffers.
    std::vector<double> state() {
        std::vector<double> out;
        for (const auto& p : params_) out.insert(out.end(), p.var->value.begin(), p.var->value.end());
        for (auto* b : buffers()) out.insert(out.end(), b->begin(), b->end());
        return out;
    }

    void set_state(const std::vector<double>& s) {
        std::size_t pos = 0;
        auto take = [&](std::vector<double>& dst) {
            if (pos + dst.size() > s.size()) throw InvalidArgument("model: state vector too short");
            std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
            pos += dst.size();
        };
        for (auto& p : params_) take(p.var->value);
        for (auto* b : buffers()) take(*b);
        if (pos != s.size()) throw InvalidArgument("model: state vector too long");
    }

private:
    static const ModelConfig& checked(const ModelConfig& cfg) {
        const auto v = validate(cfg);
        if (!v.empty()) throw InvalidArgument(v.front());
        return cfg;
    }

    void check_batch(const ag::Var& batch) const {
        const auto& s = batch->shape;
        if (s.size() != 3 || s[0] < 1 || s[1] != static_cast<std::size_t>(cfg_.channels) ||
            s[2] != static_cast<std::size_t>(cfg_.samples)) {
            throw InvalidArgument("model: batch shape " + ag::shape_str(s) + " does not match [B x " +
                                  std::to_string(cfg_.channels) + " x " + std::to_string(cfg_.samples) + "]");
        }
    }

    void copy_state_from(const Model& other) {
        set_state(const_cast<Model&>(other).state());
        rng_ = other.rng_;
        mode_ = other.mode_;
    }

    ModelConfig cfg_;
    std::mt19937_64 rng_;
    Branch branch_t_;
    Branch branch_s_;
    ag::Var head_w_, head_b_;
    std::vector<NamedParam> params_;
    Mode mode_ = Mode::Train;
};

// ---------------------------------------------------------------------------
// Checkpoints: "MASD", u32 version, config, then f64 parameter blocks in
// declaration order followed by the running-statistics buffers.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw FormatError("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(Model& model, std::ostream& os) {
    const auto& c = model.config();
    os.write("MASD", 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    for (int v : {c.channels, c.samples, c.temporal_kernel, c.n_temporal_filters, c.depth_multiplier,
                  c.separable_kernel, c.pool1, c.pool2, c.branch_dim_t, c.branch_dim_s, c.n_classes}) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v));
    }
    detail::write_pod<double>(os, c.dropout_p);
    const auto s = model.state();
    detail::write_pod<std::uint64_t>(os, s.size());
    os.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(double)));
}

inline Model load_checkpoint(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MASD", 4) != 0) throw FormatError("checkpoint: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    ModelConfig c;
    for (int* f : {&c.channels, &c.samples, &c.temporal_kernel, &c.n_temporal_filters, &c.depth_multiplier,
                   &c.separable_kernel, &c.pool1, &c.pool2, &c.branch_dim_t, &c.branch_dim_s, &c.n_classes}) {
        *f = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    }
    c.dropout_p = detail::read_pod<double>(is);
    Model model(c);
    const auto n = detail::read_pod<std::uint64_t>(is);
    if (n != model.state().size()) throw FormatError("checkpoint: parameter count does not match config");
    std::vector<double> s(n);
    is.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated file");
    model.set_state(s);
    model.set_mode(Mode::Eval);
    return model;
}

inline void save_checkpoint(Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot write '" + path + "'");
    save_checkpoint(model, os);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open '" + path + "'");
    return load_checkpoint(is);
}

}  // namespace masd
