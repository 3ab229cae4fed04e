// Copyright 2026 The lctid Authors. All Rights Reserved.
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
// ==============================================================================

#pragma once

// RIFF/WAVE decoding and encoding. Supports PCM16 and IEEE float32, mono or
// stereo; stereo is downmixed by averaging the two channels.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lctid/error.hpp"
#include "lctid/io.hpp"

namespace lctid {

inline constexpr double kCanonicalSampleRate = 16000.0;

// Mono audio, samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  double sample_rate_hz = kCanonicalSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

enum class WavEncoding { kPcm16, kFloat32 };

struct WavInfo {
  WavEncoding encoding = WavEncoding::kPcm16;
  int channels = 1;
  std::uint32_t sample_rate_hz = 0;
  std::uint64_t num_frames = 0;

  double duration_s() const {
    return static_cast<double>(num_frames) / static_cast<double>(sample_rate_hz);
  }
};

namespace wav_detail {

static_assert(std::endian::native == std::endian::little,
              "WAV codec assumes a little-endian host");

inline std::uint16_t u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct Layout {
  WavInfo info;
  std::uint64_t data_offset = 0;
  std::uint64_t data_bytes = 0;
};

// Walks the chunk list. `bytes` may hold only a prefix of the file; `file_size`
// is the full size so truncation of the data chunk can be detected without
// reading the payload.
inline Layout parse_layout(const unsigned char* bytes, std::size_t avail, std::uint64_t file_size,
                           const std::string& name) {
  if (avail < 12 || std::memcmp(bytes, "RIFF", 4) != 0 || std::memcmp(bytes + 8, "WAVE", 4) != 0) {
    if (file_size < 12) throw InvalidInput(name + ": truncated file");
    throw InvalidInput(name + ": not a RIFF/WAVE file");
  }
  Layout out;
  bool have_fmt = false;
  std::uint16_t block_align = 0;
  std::size_t pos = 12;
  while (true) {
    if (pos + 8 > avail) {
      if (pos + 8 > file_size) {
        throw InvalidInput(name + (have_fmt ? ": truncated file (no data chunk)" : ": truncated file"));
      }
      throw InvalidInput(name + ": header too large");
    }
    const unsigned char* ck = bytes + pos;
    const std::uint32_t ck_size = u32(ck + 4);
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (ck_size < 16 || pos + 8 + ck_size > avail) throw InvalidInput(name + ": truncated fmt chunk");
      const unsigned char* f = ck + 8;
      std::uint16_t tag = u16(f);
      const std::uint16_t channels = u16(f + 2);
      const std::uint32_t rate = u32(f + 4);
      block_align = u16(f + 12);
      const std::uint16_t bits = u16(f + 14);
      if (tag == kFormatExtensible) {
        if (ck_size < 40) throw InvalidInput(name + ": truncated extensible fmt chunk");
        tag = u16(f + 24);
      }
      if (tag == kFormatPcm && bits == 16) {
        out.info.encoding = WavEncoding::kPcm16;
      } else if (tag == kFormatFloat && bits == 32) {
        out.info.encoding = WavEncoding::kFloat32;
      } else {
        throw InvalidInput(name + ": unsupported encoding (format tag " + std::to_string(tag) +
                           ", " + std::to_string(bits) + " bits); expected PCM16 or float32");
      }
      if (channels != 1 && channels != 2) {
        throw InvalidInput(name + ": unsupported channel count " + std::to_string(channels));
      }
      if (rate == 0) throw InvalidInput(name + ": zero sample rate");
      if (block_align != channels * (bits / 8)) throw InvalidInput(name + ": inconsistent block alignment");
      out.info.channels = channels;
      out.info.sample_rate_hz = rate;
      have_fmt = true;
    } else if (std::memcmp(ck, "data", 4) == 0) {
      if (!have_fmt) throw InvalidInput(name + ": data chunk before fmt chunk");
      out.data_offset = pos + 8;
      if (out.data_offset + ck_size > file_size) throw InvalidInput(name + ": truncated file");
      out.data_bytes = ck_size;
      out.info.num_frames = ck_size / block_align;
      if (out.info.num_frames == 0) throw InvalidInput(name + ": no audio samples");
      return out;
    }
    pos += 8 + ck_size + (ck_size & 1u);
  }
}

}  // namespace wav_detail

// Reads only the headers of a WAV file.
inline WavInfo probe_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> head(static_cast<std::size_t>(std::min<std::uint64_t>(file_size, 65536)));
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  return wav_detail::parse_layout(head.data(), head.size(), file_size, path.string()).info;
}

inline Waveform decode_wav(const std::string& bytes, const std::string& name = "<memory>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto layout = wav_detail::parse_layout(p, bytes.size(), bytes.size(), name);
  const auto& info = layout.info;
  Waveform w;
  w.sample_rate_hz = info.sample_rate_hz;
  w.samples.resize(info.num_frames);
  const unsigned char* d = p + layout.data_offset;
  const int ch = info.channels;
  for (std::uint64_t i = 0; i < info.num_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < ch; ++c) {
      if (info.encoding == WavEncoding::kPcm16) {
        const auto v = static_cast<std::int16_t>(wav_detail::u16(d + (i * ch + c) * 2));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        const std::uint32_t bits = wav_detail::u32(d + (i * ch + c) * 4);
        acc += static_cast<double>(std::bit_cast<float>(bits));
      }
    }
    w.samples[i] = ch == 1 ? acc : acc / ch;
  }
  return w;
}

inline Waveform read_wav(const std::filesystem::path& path) {
  return decode_wav(io::read_file(path), path.string());
}

inline std::string encode_wav(const Waveform& w, WavEncoding encoding = WavEncoding::kPcm16) {
  using namespace wav_detail;
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bytes_per_sample = pcm ? 2 : 4;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * bytes_per_sample);
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate_hz));
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, pcm ? kFormatPcm : kFormatFloat);
  put_u16(s, 1);
  put_u32(s, rate);
  put_u32(s, rate * bytes_per_sample);
  put_u16(s, bytes_per_sample);
  put_u16(s, pcm ? 16 : 32);
  s += "data";
  put_u32(s, data_bytes);
  for (double x : w.samples) {
    if (pcm) {
      const double q = std::nearbyint(std::clamp(x, -1.0, 1.0) * 32768.0);
      put_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
    } else {
      put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
  return s;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w,
                      WavEncoding encoding = WavEncoding::kPcm16) {
  io::write_file_atomic(path, encode_wav(w, encoding));
}

}  // namespace lctid
