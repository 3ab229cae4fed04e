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

// Corpus handling: manifests, class-balanced subsets, and a synthetic
// two-class corpus for desk-scale experiments.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lctid/error.hpp"
#include "lctid/io.hpp"
#include "lctid/random.hpp"
#include "lctid/wav.hpp"

namespace lctid {

// LT: literary (read-style) speech. CT: colloquial (spontaneous-style) speech.
enum class Dialect : int { kLT = 0, kCT = 1 };

inline constexpr std::size_t kNumDialects = 2;

inline std::string_view to_string(Dialect d) { return d == Dialect::kLT ? "LT" : "CT"; }

inline std::optional<Dialect> parse_dialect(std::string_view s) {
  if (s == "LT") return Dialect::kLT;
  if (s == "CT") return Dialect::kCT;
  return std::nullopt;
}

inline std::size_t index_of(Dialect d) { return static_cast<std::size_t>(d); }

struct UtteranceRecord {
  std::string id;
  std::string audio_path;
  Dialect dialect = Dialect::kLT;
  double duration_s = 0.0;
};

struct CorpusManifest {
  std::vector<UtteranceRecord> records;
  std::array<double, kNumDialects> total_duration_s{};

  void recompute_totals() {
    total_duration_s = {};
    for (const auto& r : records) total_duration_s[index_of(r.dialect)] += r.duration_s;
  }

  std::size_t count(Dialect d) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.dialect == d;
    return n;
  }
};

namespace corpus {

inline constexpr std::string_view kManifestHeader = "id\tpath\tdialect";

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::string_view chomp(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Parses a tab-separated manifest (header `id<TAB>path<TAB>dialect`). Relative
// audio paths are resolved against the manifest's directory, and each file's
// header is probed to fill in its duration.
inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());

  CorpusManifest manifest;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t row = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::chomp(line);
    if (text.empty()) continue;
    if (!saw_header) {
      if (text != kManifestHeader) {
        throw InvalidInput(path.string() + ": row " + std::to_string(row) +
                           ": expected header \"id<TAB>path<TAB>dialect\"");
      }
      saw_header = true;
      continue;
    }
    const auto cols = detail::split_tabs(text);
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty()) {
      throw InvalidInput(path.string() + ": row " + std::to_string(row) +
                         ": malformed row (expected 3 non-empty tab-separated fields)");
    }
    const auto dialect = parse_dialect(cols[2]);
    if (!dialect) {
      throw InvalidInput(path.string() + ": row " + std::to_string(row) + ": unknown dialect \"" +
                         std::string(cols[2]) + "\" (expected LT or CT)");
    }
    UtteranceRecord rec;
    rec.id = std::string(cols[0]);
    if (!ids.insert(rec.id).second) {
      throw InvalidInput(path.string() + ": row " + std::to_string(row) + ": duplicate id " + rec.id);
    }
    fs::path audio{std::string(cols[1])};
    if (audio.is_relative()) audio = path.parent_path() / audio;
    rec.audio_path = audio.lexically_normal().string();
    rec.dialect = *dialect;
    try {
      rec.duration_s = probe_wav(audio).duration_s();
    } catch (const Error& e) {
      throw InvalidInput(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    }
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty()) throw InvalidInput(path.string() + ": no records");
  manifest.recompute_totals();
  return manifest;
}

// Writes a manifest; audio paths are written relative to the manifest's
// directory when they live beneath it.
inline void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  namespace fs = std::filesystem;
  std::string out(kManifestHeader);
  out += '\n';
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& r : manifest.records) {
    fs::path p(r.audio_path);
    auto rel = p.lexically_proximate(base);
    std::string shown = (!rel.empty() && *rel.begin() != "..") ? rel.generic_string() : p.generic_string();
    out += r.id + '\t' + shown + '\t' + std::string(to_string(r.dialect)) + '\n';
  }
  io::write_file_atomic(path, out);
}

// Per class, walks the records in a seeded shuffle and keeps them until the
// accumulated duration first reaches `hours_per_class`. Selected records keep
// their original manifest order.
inline CorpusManifest derive_balanced_subset(const CorpusManifest& manifest, double hours_per_class,
                                             std::uint64_t seed) {
  if (!(hours_per_class >= 0.0)) throw InvalidInput("hours_per_class must be non-negative");
  const double target_s = hours_per_class * 3600.0;
  std::vector<bool> keep(manifest.records.size(), false);
  for (std::size_t c = 0; c < kNumDialects; ++c) {
    if (manifest.total_duration_s[c] + 1e-9 < target_s) {
      throw InvalidInput("insufficient data: class " + std::string(to_string(static_cast<Dialect>(c))) +
                         " has " + std::to_string(manifest.total_duration_s[c] / 3600.0) +
                         " h, requested " + std::to_string(hours_per_class) + " h");
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      if (index_of(manifest.records[i].dialect) == c) order.push_back(i);
    }
    Rng rng(derive_seed(seed, c));
    rng.shuffle(order.begin(), order.end());
    double acc = 0.0;
    for (auto i : order) {
      if (acc >= target_s) break;
      keep[i] = true;
      acc += manifest.records[i].duration_s;
    }
  }
  CorpusManifest out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (keep[i]) out.records.push_back(manifest.records[i]);
  }
  out.recompute_totals();
  return out;
}

struct SynthSpec {
  std::size_t num_utterances = 200;
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;
  double sample_rate_hz = kCanonicalSampleRate;
  std::filesystem::path output_dir = "synth";
};

// Generator parameters for one class. Class A ("LT-like") uses fast pitch,
// amplitude and formant modulation, strong cycle-to-cycle perturbation, and
// inserted pauses; class B ("CT-like") uses the same source with slow, shallow
// modulation and no pauses.
struct SynthStyle {
  double modulation_hz_lo, modulation_hz_hi;
  double f0_depth;
  double amp_depth;
  double formant_depth_hz;
  double period_jitter;
  double cycle_shimmer;
  double pause_rate_hz;
};

inline constexpr SynthStyle kLiteraryStyle{4.0, 7.0, 0.12, 0.8, 250.0, 0.02, 0.12, 1.5};
inline constexpr SynthStyle kColloquialStyle{0.4, 0.9, 0.03, 0.15, 40.0, 0.002, 0.015, 0.0};

namespace detail {

// Two-pole resonator with time-varying centre frequency.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;
  double step(double x, double freq_hz, double bw_hz, double fs) {
    const double r = std::exp(-std::numbers::pi * bw_hz / fs);
    const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq_hz / fs);
    const double a2 = -r * r;
    const double y = (1.0 - r) * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Adds a band-limited impulse of height `amp` at fractional position `pos`
// (Hann-windowed sinc, 8 taps either side).
inline void add_fractional_impulse(std::vector<double>& buf, double pos, double amp) {
  constexpr int kHalf = 8;
  const auto centre = static_cast<long>(std::floor(pos));
  for (long n = centre - kHalf + 1; n <= centre + kHalf; ++n) {
    if (n < 0 || n >= static_cast<long>(buf.size())) continue;
    const double t = static_cast<double>(n) - pos;
    const double sinc = std::abs(t) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * t) / (std::numbers::pi * t);
    const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / kHalf);
    buf[static_cast<std::size_t>(n)] += amp * sinc * win;
  }
}

}  // namespace detail

// Synthesizes one utterance in the given style.
inline Waveform synth_utterance(const SynthStyle& style, double duration_s, double fs, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  const double base_f0 = rng.uniform(140.0, 240.0);
  const double mod_hz = rng.uniform(style.modulation_hz_lo, style.modulation_hz_hi);
  const double mod_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double f1_base = rng.uniform(450.0, 650.0);
  const double f2_base = rng.uniform(1300.0, 1700.0);
  const double two_pi = 2.0 * std::numbers::pi;

  // Pause mask: silent stretches of 60-150 ms placed by a Poisson process.
  std::vector<char> voiced(n, 1);
  if (style.pause_rate_hz > 0.0) {
    double t = rng.uniform(0.1, 0.4);
    while (t < duration_s) {
      const double len = rng.uniform(0.06, 0.15);
      const auto a = static_cast<std::size_t>(t * fs);
      const auto b = std::min(n, static_cast<std::size_t>((t + len) * fs));
      for (std::size_t i = a; i < b; ++i) voiced[i] = 0;
      t += len - std::log(1.0 - rng.uniform()) / style.pause_rate_hz;
    }
  }

  auto envelope = [&](double t) {
    return 1.0 - style.amp_depth * 0.5 * (1.0 - std::cos(two_pi * mod_hz * t + mod_phase));
  };

  // Glottal excitation: one band-limited impulse per cycle at fractional
  // positions, period and amplitude perturbed per cycle.
  std::vector<double> excitation(n, 0.0);
  double pos = rng.uniform(0.0, fs / base_f0);
  while (pos < static_cast<double>(n)) {
    const double t = pos / fs;
    const double f0 = base_f0 * (1.0 + style.f0_depth * std::sin(two_pi * mod_hz * t + mod_phase));
    const double period = fs / f0 * (1.0 + style.period_jitter * rng.normal());
    const double amp = envelope(t) * (1.0 + style.cycle_shimmer * rng.normal());
    const auto idx = static_cast<std::size_t>(pos);
    if (idx < n && voiced[idx]) detail::add_fractional_impulse(excitation, pos, amp);
    pos += std::max(period, fs / 500.0);
  }

  detail::Resonator glottal, f1, f2;
  Waveform w;
  w.sample_rate_hz = fs;
  w.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double swing = std::sin(two_pi * mod_hz * 0.9 * t + 1.3 * mod_phase);
    const double g = glottal.step(excitation[i], 0.0, 400.0, fs);
    const double a = f1.step(g, f1_base + style.formant_depth_hz * swing, 90.0, fs);
    const double b = f2.step(g, f2_base - 1.6 * style.formant_depth_hz * swing, 130.0, fs);
    w.samples[i] = a + 0.6 * b;
    peak = std::max(peak, std::abs(w.samples[i]));
  }
  const double gain = peak > 0.0 ? 0.8 / peak : 1.0;
  for (auto& x : w.samples) x = x * gain + 1e-3 * rng.normal();
  return w;
}

// Writes `spec.num_utterances` WAV files (even indices LT-like, odd CT-like)
// plus `manifest.tsv` into `spec.output_dir`.
inline CorpusManifest synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (spec.num_utterances == 0) throw InvalidInput("synth: num_utterances must be positive");
  if (!(spec.min_duration_s > 0.0) || spec.max_duration_s < spec.min_duration_s) {
    throw InvalidInput("synth: invalid duration range");
  }
  if (!(spec.sample_rate_hz > 0.0)) throw InvalidInput("synth: sample rate must be positive");
  std::error_code ec;
  fs::create_directories(spec.output_dir, ec);
  if (ec || !fs::is_directory(spec.output_dir)) {
    throw IoError("synth: cannot create output directory " + spec.output_dir.string());
  }

  CorpusManifest manifest;
  for (std::size_t i = 0; i < spec.num_utterances; ++i) {
    Rng rng(derive_seed(seed, i));
    const Dialect dialect = i % 2 == 0 ? Dialect::kLT : Dialect::kCT;
    const double dur = rng.uniform(spec.min_duration_s, spec.max_duration_s);
    const auto& style = dialect == Dialect::kLT ? kLiteraryStyle : kColloquialStyle;
    const Waveform w = synth_utterance(style, dur, spec.sample_rate_hz, rng);

    char name[64];
    std::snprintf(name, sizeof name, "utt%04zu_%s", i, dialect == Dialect::kLT ? "LT" : "CT");
    const fs::path wav_path = spec.output_dir / (std::string(name) + ".wav");
    write_wav(wav_path, w);

    UtteranceRecord rec;
    rec.id = name;
    rec.audio_path = wav_path.lexically_normal().string();
    rec.dialect = dialect;
    rec.duration_s = w.duration_s();
    manifest.records.push_back(std::move(rec));
  }
  manifest.recompute_totals();
  save_manifest(spec.output_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace corpus
}  // namespace lctid
