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

// Frame-level acoustic features and the per-utterance feature matrix.
//
// Ten handcrafted features: prosodic (F0, energy, voicing probability),
// voice quality (jitter, derivative of jitter, shimmer, log-HNR), spectral
// (spectral flux, psychoacoustic sharpness) and temporal (zero crossing rate);
// plus 13 MFCCs. All channels share one 10 ms hop grid.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lctid/dsp.hpp"
#include "lctid/error.hpp"
#include "lctid/matrix.hpp"
#include "lctid/pitch.hpp"
#include "lctid/wav.hpp"

namespace lctid::features {

enum class FeatureId : int {
  kF0 = 0,
  kEnergy,
  kVoicingProb,
  kJitter,
  kJitterDerivative,
  kShimmer,
  kHnr,
  kSpectralFlux,
  kSharpness,
  kZcr,
  kMfcc0,
  // kMfcc0 + i for i in 0..12
};

inline constexpr int kNumHandcrafted = 10;
inline constexpr int kNumMfcc = 13;
inline constexpr int kNumFeatureIds = kNumHandcrafted + kNumMfcc;

inline constexpr FeatureId mfcc_id(int i) { return static_cast<FeatureId>(static_cast<int>(FeatureId::kMfcc0) + i); }
inline constexpr int ordinal(FeatureId id) { return static_cast<int>(id); }
inline constexpr bool is_mfcc(FeatureId id) { return ordinal(id) >= ordinal(FeatureId::kMfcc0); }

enum class FeatureGroup { kProsodic, kVoiceQuality, kSpectral, kTemporal, kCepstral };

inline FeatureGroup group_of(FeatureId id) {
  switch (id) {
    case FeatureId::kF0:
    case FeatureId::kEnergy:
    case FeatureId::kVoicingProb:
      return FeatureGroup::kProsodic;
    case FeatureId::kJitter:
    case FeatureId::kJitterDerivative:
    case FeatureId::kShimmer:
    case FeatureId::kHnr:
      return FeatureGroup::kVoiceQuality;
    case FeatureId::kSpectralFlux:
    case FeatureId::kSharpness:
      return FeatureGroup::kSpectral;
    case FeatureId::kZcr:
      return FeatureGroup::kTemporal;
    default:
      return FeatureGroup::kCepstral;
  }
}

inline std::string to_string(FeatureId id) {
  static constexpr std::array<std::string_view, kNumHandcrafted> kNames = {
      "F0", "ENERGY", "VPROB", "JITTER", "DJITTER", "SHIMMER", "HNR", "SFLUX", "SHARP", "ZCR"};
  if (is_mfcc(id)) return "MFCC_" + std::to_string(ordinal(id) - ordinal(FeatureId::kMfcc0));
  return std::string(kNames[static_cast<std::size_t>(ordinal(id))]);
}

inline std::optional<FeatureId> parse_feature_id(std::string_view s) {
  for (int i = 0; i < kNumFeatureIds; ++i) {
    if (to_string(static_cast<FeatureId>(i)) == s) return static_cast<FeatureId>(i);
  }
  return std::nullopt;
}

inline std::string valid_feature_ids() {
  std::string out;
  for (int i = 0; i < kNumFeatureIds; ++i) {
    if (i) out += ", ";
    out += to_string(static_cast<FeatureId>(i));
  }
  return out;
}

// Ordered, duplicate-free list of channels, always in FeatureId order.
class FeatureSet {
 public:
  FeatureSet() = default;
  FeatureSet(std::initializer_list<FeatureId> ids) {
    for (auto id : ids) add(id);
  }

  static FeatureSet handcrafted() {
    FeatureSet s;
    for (int i = 0; i < kNumHandcrafted; ++i) s.add(static_cast<FeatureId>(i));
    return s;
  }
  static FeatureSet mfcc() {
    FeatureSet s;
    for (int i = 0; i < kNumMfcc; ++i) s.add(mfcc_id(i));
    return s;
  }

  // Accepts tokens separated by ',' or '+': "handcrafted", "mfcc", or any
  // feature id ("F0", "MFCC_3", ...).
  static FeatureSet parse(std::string_view spec) {
    FeatureSet s;
    std::size_t start = 0;
    bool any = false;
    while (start <= spec.size()) {
      auto end = spec.find_first_of(",+", start);
      if (end == std::string_view::npos) end = spec.size();
      std::string_view tok = spec.substr(start, end - start);
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      if (!tok.empty()) {
        any = true;
        if (tok == "handcrafted") {
          s.merge(handcrafted());
        } else if (tok == "mfcc") {
          s.merge(mfcc());
        } else if (auto id = parse_feature_id(tok)) {
          s.add(*id);
        } else {
          throw InvalidInput("unknown feature \"" + std::string(tok) + "\"; valid: handcrafted, mfcc, " +
                             valid_feature_ids());
        }
      }
      start = end + 1;
    }
    if (!any) throw InvalidInput("empty feature set");
    return s;
  }

  void add(FeatureId id) {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) ids_.insert(it, id);
  }
  void merge(const FeatureSet& other) {
    for (auto id : other.ids_) add(id);
  }
  bool contains(FeatureId id) const { return std::binary_search(ids_.begin(), ids_.end(), id); }
  bool overlaps(const FeatureSet& other) const {
    return std::any_of(other.ids_.begin(), other.ids_.end(), [&](FeatureId id) { return contains(id); });
  }
  FeatureSet without(FeatureId id) const {
    FeatureSet s;
    for (auto x : ids_) {
      if (x != id) s.add(x);
    }
    return s;
  }

  const std::vector<FeatureId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  std::string to_string() const {
    std::string out;
    for (auto id : ids_) {
      if (!out.empty()) out += ',';
      out += features::to_string(id);
    }
    return out;
  }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

 private:
  std::vector<FeatureId> ids_;
};

// channels x frames on a 10 ms hop grid.
struct FeatureMatrix {
  Matrix<double> values;
  std::vector<FeatureId> channel_ids;
  double hop_ms = 10.0;
  std::string source_id;

  std::size_t num_channels() const { return values.rows(); }
  std::size_t num_frames() const { return values.cols(); }

  std::optional<std::size_t> channel_index(FeatureId id) const {
    for (std::size_t i = 0; i < channel_ids.size(); ++i) {
      if (channel_ids[i] == id) return i;
    }
    return std::nullopt;
  }
};

struct MfccConfig {
  int num_filters = 26;
  int num_coeffs = kNumMfcc;
  double pre_emphasis = 0.97;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;
};

struct FeatureConfig {
  double prosodic_frame_ms = 60.0;
  double short_frame_ms = 20.0;
  // Window for the period-based voice-quality measures (jitter, its
  // derivative, shimmer). Several pitch periods must fit inside it.
  double period_frame_ms = 60.0;
  double hop_ms = 10.0;
  double min_duration_s = 0.1;
  pitch::PitchConfig pitch;
  MfccConfig mfcc;
};

// ---------------------------------------------------------------------------
// Frame-level features

// Sum of squared amplitudes.
inline double energy(std::span<const double> frame) {
  double e = 0.0;
  for (double x : frame) e += x * x;
  return e;
}

// Sign changes per second. A zero sample counts as a crossing when its two
// neighbours have opposite signs.
inline double zcr(std::span<const double> frame, double sample_rate_hz) {
  if (frame.empty()) throw InvalidInput("zcr: empty frame");
  std::size_t crossings = 0;
  for (std::size_t n = 1; n < frame.size(); ++n) {
    if (frame[n] != 0.0) {
      crossings += frame[n - 1] * frame[n] < 0.0;
    } else if (n + 1 < frame.size()) {
      crossings += frame[n - 1] * frame[n + 1] < 0.0;
    }
  }
  return static_cast<double>(crossings) * sample_rate_hz / static_cast<double>(frame.size());
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Mean absolute difference of consecutive periods over the N_p - 1
// differences, normalized by the mean period.
inline double jitter(const pitch::PeriodSequence& p) {
  const auto& t = p.periods_s;
  if (t.size() < 3) throw InvalidInput("jitter: needs at least 3 periods");
  double acc = 0.0;
  for (std::size_t n = 1; n < t.size(); ++n) acc += std::abs(t[n] - t[n - 1]);
  return acc / static_cast<double>(t.size() - 1) / mean_of(t);
}

// "Jitter of jitter": mean absolute change of the local jitter over the
// N_p - 2 second differences, normalized by the mean period.
inline double jitter_derivative(const pitch::PeriodSequence& p) {
  const auto& t = p.periods_s;
  if (t.size() < 4) throw InvalidInput("jitter_derivative: needs at least 4 periods");
  double acc = 0.0;
  for (std::size_t n = 2; n < t.size(); ++n) {
    const double j = std::abs(t[n] - t[n - 1]);
    const double j_prev = std::abs(t[n - 1] - t[n - 2]);
    acc += std::abs(j - j_prev);
  }
  return acc / static_cast<double>(t.size() - 2) / mean_of(t);
}

// Mean absolute difference of consecutive peak-to-peak cycle amplitudes,
// normalized by the mean amplitude.
inline double shimmer(const pitch::PeriodSequence& p) {
  const auto& a = p.peak_amps;
  if (a.size() < 3) throw InvalidInput("shimmer: needs at least 3 periods");
  const double mean = mean_of(a);
  if (!(mean > 0.0)) return 0.0;
  double acc = 0.0;
  for (std::size_t n = 1; n < a.size(); ++n) acc += std::abs(a[n] - a[n - 1]);
  return acc / static_cast<double>(a.size() - 1) / mean;
}

inline constexpr double kHnrMin = 1e-4;
inline constexpr double kHnrMax = 1e4;

// Normalized autocorrelation of `frame` at integer `lag`.
inline double normalized_autocorrelation(std::span<const double> frame, std::size_t lag) {
  if (lag >= frame.size()) return 0.0;
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t n = 0; n + lag < frame.size(); ++n) {
    const double a = frame[n], b = frame[n + lag];
    xy += a * b;
    xx += a * a;
    yy += b * b;
  }
  if (xx <= 0.0 || yy <= 0.0) return 0.0;
  return xy / std::sqrt(xx * yy);
}

// log10 harmonic-to-noise ratio from the normalized autocorrelation r at the
// pitch lag: HNR = r / (1 - r), clamped to [1e-4, 1e4]. The lag is refined to
// sub-sample precision by a parabola through the three nearest integer lags.
inline double hnr(std::span<const double> frame, double sample_rate_hz, double f0_hz) {
  if (!(f0_hz > 0.0)) throw InvalidInput("hnr: unvoiced frame (f0 = 0)");
  const double lag = sample_rate_hz / f0_hz;
  const auto centre = static_cast<std::size_t>(std::llround(lag));
  double r = normalized_autocorrelation(frame, centre);
  if (centre >= 1 && centre + 1 < frame.size()) {
    const double a = normalized_autocorrelation(frame, centre - 1);
    const double c = normalized_autocorrelation(frame, centre + 1);
    const double denom = a - 2.0 * r + c;
    if (denom < 0.0) {
      const double offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
      r = r - 0.25 * (a - c) * offset;
    }
  }
  r = std::min(r, 1.0);
  const double ratio = r >= 1.0 ? kHnrMax : std::clamp(r / (1.0 - r), kHnrMin, kHnrMax);
  return std::log10(ratio);
}

// Amplitude-weighted mean frequency over bins 1..K/2; 0 for a silent spectrum.
inline double spectral_centroid(const dsp::Spectrum& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < s.magnitudes.size(); ++j) {
    num += s.bin_frequency(j) * s.magnitudes[j];
    den += s.magnitudes[j];
  }
  return den > 0.0 ? num / den : 0.0;
}

// Spectral centroid on the Bark scale.
inline double sharpness(const dsp::Spectrum& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < s.magnitudes.size(); ++j) {
    num += dsp::hz_to_bark(s.bin_frequency(j)) * s.magnitudes[j];
    den += s.magnitudes[j];
  }
  return den > 0.0 ? num / den : 0.0;
}

// Squared difference of successive L2-normalized spectra; lies in [0, 4].
// Zero when either spectrum is silent.
inline double spectral_flux(const dsp::Spectrum& current, const dsp::Spectrum& previous) {
  if (current.magnitudes.size() != previous.magnitudes.size()) {
    throw ShapeMismatch("spectral_flux: spectra of different sizes");
  }
  double n_cur = 0.0, n_prev = 0.0;
  for (std::size_t k = 0; k < current.magnitudes.size(); ++k) {
    n_cur += current.magnitudes[k] * current.magnitudes[k];
    n_prev += previous.magnitudes[k] * previous.magnitudes[k];
  }
  if (n_cur <= 0.0 || n_prev <= 0.0) return 0.0;
  n_cur = std::sqrt(n_cur);
  n_prev = std::sqrt(n_prev);
  double flux = 0.0;
  for (std::size_t k = 0; k < current.magnitudes.size(); ++k) {
    const double d = current.magnitudes[k] / n_cur - previous.magnitudes[k] / n_prev;
    flux += d * d;
  }
  return flux;
}

// ---------------------------------------------------------------------------
// MFCC

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters with edges equally spaced on the mel scale. weights is
// num_filters x (K/2 + 1), indexed by FFT bin including DC.
struct MelFilterbank {
  Matrix<double> weights;
  std::vector<double> centres_hz;
};

inline MelFilterbank make_mel_filterbank(int num_filters, std::size_t fft_size, double sample_rate_hz,
                                         double low_hz, double high_hz) {
  if (num_filters < 1) throw InvalidInput("mel filterbank needs at least one filter");
  high_hz = std::min(high_hz, sample_rate_hz / 2.0);
  const double mel_lo = hz_to_mel(low_hz), mel_hi = hz_to_mel(high_hz);
  std::vector<double> edges(static_cast<std::size_t>(num_filters) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(num_filters + 1));
  }
  MelFilterbank fb;
  const std::size_t bins = fft_size / 2 + 1;
  fb.weights = Matrix<double>(static_cast<std::size_t>(num_filters), bins);
  for (int m = 0; m < num_filters; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    fb.centres_hz.push_back(mid);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(fft_size);
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb.weights(static_cast<std::size_t>(m), k) = w;
    }
  }
  return fb;
}

namespace detail {

inline const MelFilterbank& cached_filterbank(const MfccConfig& cfg, std::size_t fft_size, double sample_rate_hz) {
  struct Entry {
    int num_filters;
    std::size_t fft_size;
    double rate, lo, hi;
    MelFilterbank fb;
  };
  thread_local std::deque<Entry> cache;
  for (const auto& e : cache) {
    if (e.num_filters == cfg.num_filters && e.fft_size == fft_size && e.rate == sample_rate_hz &&
        e.lo == cfg.low_hz && e.hi == cfg.high_hz) {
      return e.fb;
    }
  }
  cache.push_back({cfg.num_filters, fft_size, sample_rate_hz, cfg.low_hz, cfg.high_hz,
                   make_mel_filterbank(cfg.num_filters, fft_size, sample_rate_hz, cfg.low_hz, cfg.high_hz)});
  return cache.back().fb;
}

}  // namespace detail

// Orthonormal DCT-II of `x`, first `num_coeffs` coefficients.
inline std::vector<double> dct2(std::span<const double> x, int num_coeffs) {
  const auto n = x.size();
  std::vector<double> out(static_cast<std::size_t>(num_coeffs), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                             (2.0 * static_cast<double>(n)));
    }
    out[k] = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
  }
  return out;
}

// Pre-emphasis, Hamming window, mel filterbank on the power spectrum, floored
// log energies, DCT-II.
inline std::vector<double> mfcc(std::span<const double> frame, double sample_rate_hz = kCanonicalSampleRate,
                                const MfccConfig& cfg = {}) {
  if (frame.empty()) throw InvalidInput("mfcc: empty frame");
  std::vector<double> emph(frame.size());
  emph[0] = frame[0];
  for (std::size_t n = 1; n < frame.size(); ++n) emph[n] = frame[n] - cfg.pre_emphasis * frame[n - 1];
  const std::size_t fft_size = dsp::next_power_of_two(frame.size());
  const auto spec = dsp::windowed_fft(emph, fft_size);
  const auto& fb = detail::cached_filterbank(cfg, fft_size, sample_rate_hz);
  std::vector<double> log_e(static_cast<std::size_t>(cfg.num_filters));
  for (std::size_t m = 0; m < log_e.size(); ++m) {
    double e = 0.0;
    const auto w = fb.weights.row(m);
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (w[k] != 0.0) e += w[k] * std::norm(spec[k]);
    }
    log_e[m] = std::log(std::max(e, cfg.log_floor));
  }
  return dct2(log_e, cfg.num_coeffs);
}

// ---------------------------------------------------------------------------
// Utterance-level extraction

// Extracts the requested channels. Prosodic channels use 60 ms frames, the
// others 20 ms frames (period-based voice-quality measures use
// `period_frame_ms`); all frames start on the shared 10 ms hop grid and every
// channel is trimmed to the shortest channel length. Unvoiced frames carry 0
// in F0 and the voice-quality channels.
inline FeatureMatrix extract_matrix(const Waveform& w, const FeatureSet& set, const FeatureConfig& cfg = {},
                                    std::string source_id = {}) {
  if (set.empty()) throw InvalidInput("extract_matrix: empty feature set");
  if (std::abs(w.sample_rate_hz - kCanonicalSampleRate) > 1e-9) {
    throw InvalidInput("extract_matrix: sample rate " + std::to_string(w.sample_rate_hz) +
                       " Hz is not supported (expected 16000 Hz; resampling is not provided)");
  }
  if (w.duration_s() < cfg.min_duration_s) {
    throw InvalidInput("extract_matrix: waveform of " + std::to_string(w.duration_s()) +
                       " s is shorter than the " + std::to_string(cfg.min_duration_s) + " s minimum");
  }
  const double fs = w.sample_rate_hz;
  const std::size_t hop = dsp::samples_for_ms(cfg.hop_ms, fs);
  const std::size_t long_len = dsp::samples_for_ms(cfg.prosodic_frame_ms, fs);
  const std::size_t short_len = dsp::samples_for_ms(cfg.short_frame_ms, fs);
  const std::size_t period_len = dsp::samples_for_ms(cfg.period_frame_ms, fs);
  const std::size_t long_fft = dsp::next_power_of_two(long_len);
  const std::size_t short_fft = dsp::next_power_of_two(short_len);
  const std::size_t n_frames = dsp::num_frames_for(
      w.samples.size(), std::max({long_len, short_len, period_len}), hop);
  if (n_frames == 0) throw InvalidInput("extract_matrix: waveform shorter than one analysis frame");

  bool need_pitch = false, need_periods = false, need_short_spec = false, need_mfcc = false;
  for (auto id : set.ids()) {
    switch (id) {
      case FeatureId::kF0:
      case FeatureId::kVoicingProb:
      case FeatureId::kHnr:
        need_pitch = true;
        break;
      case FeatureId::kJitter:
      case FeatureId::kJitterDerivative:
      case FeatureId::kShimmer:
        need_pitch = need_periods = true;
        break;
      case FeatureId::kSpectralFlux:
      case FeatureId::kSharpness:
        need_short_spec = true;
        break;
      default:
        if (is_mfcc(id)) need_mfcc = true;
        break;
    }
  }

  FeatureMatrix out;
  out.channel_ids = set.ids();
  out.hop_ms = cfg.hop_ms;
  out.source_id = std::move(source_id);
  out.values = Matrix<double>(set.size(), n_frames, 0.0);
  std::array<int, kNumFeatureIds> row_of{};
  row_of.fill(-1);
  for (std::size_t r = 0; r < set.size(); ++r) row_of[static_cast<std::size_t>(ordinal(set.ids()[r]))] = static_cast<int>(r);
  auto put = [&](FeatureId id, std::size_t frame, double v) {
    const int r = row_of[static_cast<std::size_t>(ordinal(id))];
    if (r >= 0) out.values(static_cast<std::size_t>(r), frame) = std::isfinite(v) ? v : 0.0;
  };

  const std::span<const double> samples(w.samples);
  dsp::Spectrum prev_short;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto long_frame = samples.subspan(i * hop, long_len);
    const auto short_frame = samples.subspan(i * hop, short_len);

    put(FeatureId::kEnergy, i, energy(long_frame));
    put(FeatureId::kZcr, i, zcr(short_frame, fs));

    if (need_pitch) {
      const auto est = pitch::shs_estimate(dsp::magnitude_spectrum(long_frame, long_fft, fs), cfg.pitch);
      put(FeatureId::kF0, i, est.f0_hz);
      put(FeatureId::kVoicingProb, i, est.voicing_prob);
      if (est.voiced()) {
        put(FeatureId::kHnr, i, hnr(short_frame, fs, est.f0_hz));
        if (need_periods) {
          try {
            const auto periods = pitch::track_periods(samples.subspan(i * hop, period_len), fs, est.f0_hz, cfg.pitch);
            put(FeatureId::kJitter, i, jitter(periods));
            put(FeatureId::kShimmer, i, shimmer(periods));
            if (periods.size() >= 4) put(FeatureId::kJitterDerivative, i, jitter_derivative(periods));
          } catch (const InvalidInput&) {
            // Too few cycles in the window: leave the voice-quality values at 0.
          }
        }
      }
    }
    if (need_short_spec) {
      auto spec = dsp::magnitude_spectrum(short_frame, short_fft, fs);
      put(FeatureId::kSharpness, i, sharpness(spec));
      put(FeatureId::kSpectralFlux, i, i == 0 ? 0.0 : spectral_flux(spec, prev_short));
      prev_short = std::move(spec);
    }
    if (need_mfcc) {
      const auto c = mfcc(short_frame, fs, cfg.mfcc);
      for (int k = 0; k < kNumMfcc && k < static_cast<int>(c.size()); ++k) put(mfcc_id(k), i, c[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

// Copies the listed channels (which must all be present) in the given order.
inline FeatureMatrix select_channels(const FeatureMatrix& m, const FeatureSet& set) {
  FeatureMatrix out;
  out.channel_ids = set.ids();
  out.hop_ms = m.hop_ms;
  out.source_id = m.source_id;
  out.values = Matrix<double>(set.size(), m.num_frames());
  for (std::size_t r = 0; r < set.size(); ++r) {
    const auto src = m.channel_index(set.ids()[r]);
    if (!src) throw ShapeMismatch("feature matrix has no channel " + to_string(set.ids()[r]));
    std::copy(m.values.row(*src).begin(), m.values.row(*src).end(), out.values.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kStdFloor = 1e-8;

struct NormStats {
  std::vector<FeatureId> channel_ids;
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline NormStats fit_norm(std::span<const FeatureMatrix> matrices) {
  if (matrices.empty()) throw InvalidInput("fit_norm: empty training set");
  NormStats st;
  st.channel_ids = matrices.front().channel_ids;
  const std::size_t c = st.channel_ids.size();
  std::vector<double> sum(c, 0.0);
  std::size_t count = 0;
  for (const auto& m : matrices) {
    if (m.channel_ids != st.channel_ids) throw ShapeMismatch("fit_norm: matrices have different channels");
    for (std::size_t r = 0; r < c; ++r) {
      for (double v : m.values.row(r)) sum[r] += v;
    }
    count += m.num_frames();
  }
  if (count < 2) throw InvalidInput("fit_norm: need at least 2 training frames per channel");
  st.mean.resize(c);
  for (std::size_t r = 0; r < c; ++r) st.mean[r] = sum[r] / static_cast<double>(count);
  std::vector<double> ss(c, 0.0);
  for (const auto& m : matrices) {
    for (std::size_t r = 0; r < c; ++r) {
      for (double v : m.values.row(r)) ss[r] += (v - st.mean[r]) * (v - st.mean[r]);
    }
  }
  st.stddev.resize(c);
  for (std::size_t r = 0; r < c; ++r) {
    st.stddev[r] = std::max(std::sqrt(ss[r] / static_cast<double>(count)), kStdFloor);
  }
  return st;
}

// z-scores every channel. Channels whose deviation sits at the floor (constant
// on the training data) map to exactly 0.
inline FeatureMatrix apply_norm(const FeatureMatrix& m, const NormStats& st) {
  if (m.channel_ids != st.channel_ids) throw ShapeMismatch("apply_norm: channel mismatch between matrix and stats");
  FeatureMatrix out = m;
  for (std::size_t r = 0; r < m.num_channels(); ++r) {
    const bool constant = st.stddev[r] <= kStdFloor;
    for (auto& v : out.values.row(r)) v = constant ? 0.0 : (v - st.mean[r]) / st.stddev[r];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV dump: header of channel ids, one row per frame.

inline void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline std::string to_csv(const FeatureMatrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.num_channels(); ++r) {
    if (r) out += ',';
    out += to_string(m.channel_ids[r]);
  }
  out += '\n';
  for (std::size_t t = 0; t < m.num_frames(); ++t) {
    for (std::size_t r = 0; r < m.num_channels(); ++r) {
      if (r) out += ',';
      append_number(out, m.values(r, t));
    }
    out += '\n';
  }
  return out;
}

}  // namespace lctid::features
