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
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "masd/common.hpp"

namespace masd {

struct Audio {
    double sample_rate = 16000.0;
    std::vector<double> samples;  // mono, nominally in [-1, 1]
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Parses a mono RIFF/WAVE file holding 16-bit PCM or 32-bit float samples.
inline Audio parse_wav(const std::vector<unsigned char>& bytes) {
    using detail::read_u16;
    using detail::read_u32;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError("wav: not a RIFF/WAVE file");
    }
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::size_t len = read_u32(chunk + 4);
        if (pos + 8 + len > bytes.size()) throw FormatError("wav: truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) throw FormatError("wav: short fmt chunk");
            format = read_u16(chunk + 8);
            channels = read_u16(chunk + 10);
            rate = read_u32(chunk + 12);
            bits = read_u16(chunk + 22);
            if (format == 0xFFFE && len >= 40) format = read_u16(chunk + 32);
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);
    }
    if (format == 0 || data == nullptr) throw FormatError("wav: missing fmt or data chunk");
    if (channels != 1) throw FormatError("wav: expected mono audio, got " + std::to_string(channels) + " channels");
    Audio audio;
    audio.sample_rate = rate;
    if (format == 1 && bits == 16) {
        audio.samples.resize(data_len / 2);
        for (std::size_t i = 0; i < audio.samples.size(); ++i) {
            const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
            audio.samples[i] = static_cast<double>(v) / 32768.0;
        }
    } else if (format == 3 && bits == 32) {
        audio.samples.resize(data_len / 4);
        for (std::size_t i = 0; i < audio.samples.size(); ++i) {
            const std::uint32_t u = read_u32(data + 4 * i);
            float f;
            std::memcpy(&f, &u, sizeof f);
            audio.samples[i] = f;
        }
    } else {
        throw FormatError("wav: unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
    }
    return audio;
}

inline Audio read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("wav: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_wav(bytes);
}

/// Serializes mono audio as 16-bit PCM (float32 when `as_float`).
inline std::string encode_wav(const Audio& audio, bool as_float = false) {
    using detail::put_u16;
    using detail::put_u32;
    const std::uint16_t bits = as_float ? 32 : 16;
    const std::uint32_t data_len = static_cast<std::uint32_t>(audio.samples.size() * bits / 8);
    const auto rate = static_cast<std::uint32_t>(audio.sample_rate);
    std::string out = "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, as_float ? 3 : 1);
    put_u16(out, 1);
    put_u32(out, rate);
    put_u32(out, rate * bits / 8);
    put_u16(out, bits / 8);
    put_u16(out, bits);
    out += "data";
    put_u32(out, data_len);
    for (double s : audio.samples) {
        if (as_float) {
            const float f = static_cast<float>(s);
            std::uint32_t u;
            std::memcpy(&u, &f, sizeof u);
            put_u32(out, u);
        } else {
            const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
            put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
        }
    }
    return out;
}

}  // namespace masd
