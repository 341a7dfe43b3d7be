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
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/common.hpp"
#include "masd/corpus.hpp"
#include "masd/fft.hpp"

namespace masd {

enum class Modality { Text, Speech };

inline std::string to_string(Modality m) { return m == Modality::Text ? "text" : "speech"; }

inline Modality parse_modality(std::string_view s) {
    if (s == "text") return Modality::Text;
    if (s == "speech") return Modality::Speech;
    throw FormatError("unknown modality '" + std::string(s) + "'");
}

/// Frozen per-word feature vectors for one assisting modality. Rows are
/// indexed by word_id and have unit L2 norm.
struct EmbeddingTable {
    Modality modality = Modality::Text;
    std::string source;
    int dim = 0;
    std::vector<std::vector<double>> vectors;

    const std::vector<double>& at(int word_id) const { return vectors.at(static_cast<std::size_t>(word_id)); }
};

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Scales `v` to unit length; throws for (near) zero vectors.
inline void normalize_in_place(std::vector<double>& v) {
    const double n = l2_norm(v);
    if (!(n >= 1e-12)) throw InvalidArgument("embedding: zero vector (norm < 1e-12)");
    for (double& x : v) x /= n;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double c = dot / (l2_norm(a) * l2_norm(b));
    return std::clamp(c, -1.0, 1.0);
}

/// Parses the embedding-table JSON document and aligns it to `corpus`.
inline EmbeddingTable parse_embedding_table(const std::string& text, const Corpus& corpus) {
    using nlohmann::json;
    // Duplicate keys inside "vectors" are silently merged by the DOM parser,
    // so they are caught while parsing.
    std::set<std::string> seen;
    std::string duplicate;
    std::vector<std::string> path;
    json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (static_cast<int>(path.size()) < depth) path.resize(static_cast<std::size_t>(depth));
            path[static_cast<std::size_t>(depth) - 1] = key;
            if (depth == 2 && path[0] == "vectors" && !seen.insert(key).second) duplicate = key;
        }
        return true;
    };
    json doc;
    try {
        doc = json::parse(text, cb);
    } catch (const json::exception& e) {
        throw FormatError(std::string("embedding: invalid JSON: ") + e.what());
    }
    if (!duplicate.empty()) throw FormatError("embedding: duplicate word_id key '" + duplicate + "'");
    if (!doc.is_object()) throw FormatError("embedding: top level must be an object");
    for (const char* field : {"modality", "source", "dim", "vectors"}) {
        if (!doc.contains(field)) throw FormatError(std::string("embedding: missing field '") + field + "'");
    }
    EmbeddingTable table;
    try {
        table.modality = parse_modality(doc.at("modality").get<std::string>());
        table.source = doc.at("source").get<std::string>();
        table.dim = doc.at("dim").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("embedding: bad header field: ") + e.what());
    }
    if (table.dim < 1) throw FormatError("embedding: dim must be >= 1");
    const auto& vecs = doc.at("vectors");
    if (!vecs.is_object()) throw FormatError("embedding: 'vectors' must be an object");

    table.vectors.assign(corpus.size(), {});
    std::vector<bool> have(corpus.size(), false);
    for (const auto& [key, value] : vecs.items()) {
        int id = -1;
        try {
            std::size_t used = 0;
            id = std::stoi(key, &used);
            if (used != key.size()) id = -1;
        } catch (const std::exception&) {
            id = -1;
        }
        if (id < 0 || id >= static_cast<int>(corpus.size())) {
            throw FormatError("embedding: key '" + key + "' is not a corpus word_id");
        }
        if (!value.is_array() || static_cast<int>(value.size()) != table.dim) {
            throw FormatError("embedding: dim mismatch for word_id " + key);
        }
        std::vector<double> v;
        v.reserve(value.size());
        for (const auto& x : value) {
            if (!x.is_number()) throw FormatError("embedding: non-numeric value for word_id " + key);
            v.push_back(x.get<double>());
        }
        if (!all_finite(v)) throw FormatError("embedding: non-finite value for word_id " + key);
        try {
            normalize_in_place(v);
        } catch (const InvalidArgument&) {
            throw FormatError("embedding: zero vector for word_id " + key);
        }
        table.vectors[static_cast<std::size_t>(id)] = std::move(v);
        have[static_cast<std::size_t>(id)] = true;
    }
    for (std::size_t i = 0; i < have.size(); ++i) {
        if (!have[i]) throw FormatError("embedding: incomplete table (missing word_id " + std::to_string(i) + ")");
    }
    return table;
}

inline EmbeddingTable load_embedding_table(const std::string& path, const Corpus& corpus) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("embedding: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_embedding_table(ss.str(), corpus);
}

inline std::string to_json(const EmbeddingTable& table) {
    nlohmann::ordered_json doc;
    doc["modality"] = to_string(table.modality);
    doc["source"] = table.source;
    doc["dim"] = table.dim;
    nlohmann::ordered_json vecs = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < table.vectors.size(); ++i) vecs[std::to_string(i)] = table.vectors[i];
    doc["vectors"] = std::move(vecs);
    return doc.dump();
}

inline void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("embedding: cannot write '" + path + "'");
    out << to_json(table);
}

/// Settings for the bundled stand-in embedding generator.
struct PseudoEmbeddingConfig {
    int dim = 16;
    std::uint64_t seed = 1;
    /// When set, words sharing a class under this task share a cluster centre.
    std::optional<TaskKind> cluster_by;
    /// Weight of the shared centre relative to the per-word direction.
    double cluster_weight = 1.0;
};

/// Seeded unit vectors, optionally clustered by a phonetic class.
inline EmbeddingTable pseudo_embeddings(Modality modality, const Corpus& corpus, const PseudoEmbeddingConfig& cfg) {
    if (cfg.dim < 1) throw InvalidArgument("pseudo_embeddings: dim must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> g;
    auto draw = [&] {
        std::vector<double> v(static_cast<std::size_t>(cfg.dim));
        for (double& x : v) x = g(rng);
        normalize_in_place(v);
        return v;
    };
    std::vector<std::vector<double>> centres;
    if (cfg.cluster_by) {
        for (int k = 0; k < corpus.n_classes(*cfg.cluster_by); ++k) centres.push_back(draw());
    }
    EmbeddingTable table;
    table.modality = modality;
    table.source = "pseudo";
    table.dim = cfg.dim;
    table.vectors.resize(corpus.size());
    for (const auto& e : corpus.entries()) {
        auto v = draw();
        if (cfg.cluster_by) {
            const auto& c = centres[static_cast<std::size_t>(corpus.task_label(e, *cfg.cluster_by))];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += cfg.cluster_weight * c[i];
        }
        normalize_in_place(v);
        table.vectors[static_cast<std::size_t>(e.word_id)] = std::move(v);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Mel spectrogram

inline double hz_to_mel(double hz) {
    if (!(hz >= 0.0)) throw InvalidArgument("hz_to_mel: frequency must be >= 0");
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelConfig {
    int n_fft = 1024;
    int hop = 256;
    int n_mels = 64;
    double f_min = 0.0;
    double f_max = 8000.0;
    double sample_rate = 16000.0;
};

inline void check(const MelConfig& cfg) {
    if (cfg.n_fft < 2 || cfg.hop < 1) throw InvalidArgument("mel: n_fft must be >= 2 and hop >= 1");
    if (cfg.n_mels < 1) throw InvalidArgument("mel: n_mels must be >= 1");
    if (!(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= cfg.sample_rate / 2.0)) {
        throw InvalidArgument("mel: need 0 <= f_min < f_max <= sample_rate/2");
    }
}

/// Centre frequencies (Hz) of the triangular filters, equally spaced in mel.
inline std::vector<double> mel_centers(const MelConfig& cfg) {
    check(cfg);
    const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    }
    return edges;
}

/// n_mels x (n_fft/2 + 1) triangular filterbank over STFT bin frequencies.
inline MatrixD mel_filterbank(const MelConfig& cfg) {
    const auto edges = mel_centers(cfg);
    const std::size_t nbins = static_cast<std::size_t>(cfg.n_fft) / 2 + 1;
    MatrixD fb(static_cast<std::size_t>(cfg.n_mels), nbins);
    for (std::size_t m = 0; m < fb.rows(); ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        for (std::size_t k = 0; k < nbins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
            const double up = (f - left) / (centre - left);
            const double down = (right - f) / (right - centre);
            fb(m, k) = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

/// Log-compressed (log(1+x)) Mel spectrogram of the Hann-windowed magnitude STFT.
inline MatrixD mel_spectrogram(std::span<const double> audio, const MelConfig& cfg = {}) {
    check(cfg);
    const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
    if (audio.size() < n_fft) throw InvalidArgument("mel_spectrogram: audio shorter than one frame");
    const std::size_t frames = (audio.size() - n_fft) / static_cast<std::size_t>(cfg.hop) + 1;
    const auto fb = mel_filterbank(cfg);
    std::vector<double> window(n_fft);
    for (std::size_t i = 0; i < n_fft; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft));
    }
    MatrixD out(fb.rows(), frames);
    std::vector<double> frame(n_fft);
    std::vector<double> mag(fb.cols());
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * static_cast<std::size_t>(cfg.hop);
        for (std::size_t i = 0; i < n_fft; ++i) frame[i] = audio[start + i] * window[i];
        const auto bins = fft::rfft(frame);
        for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(bins[k]);
        for (std::size_t m = 0; m < fb.rows(); ++m) {
            double e = 0.0;
            const auto w = fb.row(m);
            for (std::size_t k = 0; k < mag.size(); ++k) e += w[k] * mag[k];
            out(m, f) = std::log1p(e);
        }
    }
    return out;
}

/// Mean over frames; one value per Mel band.
inline std::vector<double> embed_from_mel(const MatrixD& spectrogram) {
    std::vector<double> v(spectrogram.rows(), 0.0);
    if (spectrogram.cols() == 0) return v;
    for (std::size_t m = 0; m < spectrogram.rows(); ++m) {
        double s = 0.0;
        for (double x : spectrogram.row(m)) s += x;
        v[m] = s / static_cast<double>(spectrogram.cols());
    }
    return v;
}

}  // namespace masd
