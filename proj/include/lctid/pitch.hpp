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

// Subharmonic-summation (SHS) pitch estimation and glottal-cycle tracking.
//
// The magnitude spectrum is resampled on a logarithmic frequency grid between
// f_min and f_max. For each grid frequency f the compressed, auditory-weighted
// spectrum is summed at the harmonics h*f (h = 1..H, weight c^(h-1)); a
// harmonic source therefore accumulates evidence at its fundamental even when
// the fundamental itself carries no energy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "lctid/dsp.hpp"
#include "lctid/error.hpp"

namespace lctid::pitch {

struct PitchConfig {
  double f_min_hz = 60.0;
  double f_max_hz = 400.0;
  int num_harmonics = 15;
  double compression = 0.84;
  // The arctangent auditory weight rolls off components below this frequency;
  // components above it enter with weight 1.
  double weight_knee_hz = 1250.0;
  // Spectral components above this frequency do not contribute.
  double max_component_hz = std::numeric_limits<double>::infinity();
  double points_per_octave = 96.0;
  // Amplitude compression exponent applied to spectral magnitudes before
  // summation. Being a power law it keeps the voicing probability invariant
  // to overall spectral scaling.
  double magnitude_exponent = 0.5;
  std::size_t num_candidates = 5;
  double voicing_threshold = 0.45;
};

struct Candidate {
  double freq_hz = 0.0;
  double amplitude = 0.0;
};

struct PitchEstimate {
  double f0_hz = 0.0;  // 0 when unvoiced
  double voicing_prob = 0.0;
  std::vector<Candidate> candidates;  // strongest first

  bool voiced() const { return f0_hz > 0.0; }
};

struct PeriodSequence {
  std::vector<double> periods_s;
  std::vector<double> peak_amps;

  std::size_t size() const { return periods_s.size(); }
};

// Per-candidate voicing probability 1 - mean/amplitude, clamped to [0, 1].
inline double voicing_probability(double subharmonic_mean, double candidate_amplitude) {
  if (!(candidate_amplitude > 0.0)) return 0.0;
  return std::clamp(1.0 - subharmonic_mean / candidate_amplitude, 0.0, 1.0);
}

// Arctangent auditory weighting, normalized to 1 at `knee_hz` and flat above
// it. Rolls off toward 0 at the lowest frequencies (about half weight at 65 Hz).
inline double auditory_weight(double f_hz, double knee_hz = 1250.0) {
  if (f_hz <= 0.0) return 0.0;
  if (f_hz >= knee_hz) return 1.0;
  auto raw = [](double f) { return 0.5 + std::atan(3.0 * std::log2(f / 65.0)) / std::numbers::pi; };
  return raw(f_hz) / raw(knee_hz);
}

namespace detail {

// Catmull-Rom interpolation of the magnitude spectrum at an arbitrary
// frequency. Index 0 of `mag` is bin 1; bin 0 (DC) is treated as zero.
inline double interpolate(const dsp::Spectrum& s, double f_hz) {
  const double pos = f_hz / s.bin_hz;  // fractional bin number
  const auto k = static_cast<long>(std::floor(pos));
  const double t = pos - static_cast<double>(k);
  auto at = [&](long bin) -> double {
    if (bin <= 0 || bin > static_cast<long>(s.magnitudes.size())) return 0.0;
    return s.magnitudes[static_cast<std::size_t>(bin - 1)];
  };
  const double p0 = at(k - 1), p1 = at(k), p2 = at(k + 1), p3 = at(k + 2);
  const double v = p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
  return std::max(0.0, v);
}

}  // namespace detail

// The subharmonic-summed spectrum on the log-frequency grid used by
// shs_estimate. Returns (grid frequencies, sums).
inline std::pair<std::vector<double>, std::vector<double>> subharmonic_sum(const dsp::Spectrum& spec,
                                                                           const PitchConfig& cfg = {}) {
  std::vector<double> freqs, sums;
  if (spec.magnitudes.empty() || !(spec.bin_hz > 0.0)) return {freqs, sums};
  const double nyquist = spec.bin_frequency(spec.magnitudes.size() - 1);
  const double limit = std::min(cfg.max_component_hz, nyquist);
  const auto n_points = static_cast<std::size_t>(std::floor(std::log2(cfg.f_max_hz / cfg.f_min_hz) * cfg.points_per_octave)) + 1;
  freqs.reserve(n_points);
  sums.reserve(n_points);
  // Compress once per bin, then interpolate the compressed spectrum.
  dsp::Spectrum compressed = spec;
  if (cfg.magnitude_exponent != 1.0) {
    for (auto& m : compressed.magnitudes) {
      m = cfg.magnitude_exponent == 0.5 ? std::sqrt(m) : std::pow(m, cfg.magnitude_exponent);
    }
  }
  for (std::size_t j = 0; j < n_points; ++j) {
    const double f = cfg.f_min_hz * std::exp2(static_cast<double>(j) / cfg.points_per_octave);
    double acc = 0.0;
    double weight = 1.0;
    for (int h = 1; h <= cfg.num_harmonics; ++h) {
      const double fh = f * h;
      if (fh > limit) break;
      acc += weight * auditory_weight(fh, cfg.weight_knee_hz) * detail::interpolate(compressed, fh);
      weight *= cfg.compression;
    }
    freqs.push_back(f);
    sums.push_back(acc);
  }
  return {freqs, sums};
}

inline PitchEstimate shs_estimate(const dsp::Spectrum& spec, const PitchConfig& cfg = {}) {
  PitchEstimate est;
  const auto [freqs, sums] = subharmonic_sum(spec, cfg);
  if (sums.empty()) return est;
  double mean = 0.0;
  for (double v : sums) mean += v;
  mean /= static_cast<double>(sums.size());

  // Local maxima; plateaus keep their first point. Grid endpoints count when
  // they exceed their single neighbour.
  std::vector<std::size_t> peaks;
  const std::size_t n = sums.size();
  for (std::size_t j = 0; j < n; ++j) {
    const bool left_ok = j == 0 || sums[j] > sums[j - 1];
    const bool right_ok = j + 1 == n || sums[j] >= sums[j + 1];
    if (left_ok && right_ok && sums[j] > 0.0) peaks.push_back(j);
  }
  // Greedy: strongest peaks first, ties to the lower frequency.
  std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return sums[a] > sums[b]; });
  if (peaks.size() > cfg.num_candidates) peaks.resize(cfg.num_candidates);

  for (auto j : peaks) {
    Candidate c{freqs[j], sums[j]};
    if (j > 0 && j + 1 < n) {
      // Parabolic refinement on the log-frequency axis.
      const double a = sums[j - 1], b = sums[j], d = sums[j + 1];
      const double denom = a - 2.0 * b + d;
      if (denom < 0.0) {
        const double offset = std::clamp(0.5 * (a - d) / denom, -0.5, 0.5);
        c.freq_hz = cfg.f_min_hz * std::exp2((static_cast<double>(j) + offset) / cfg.points_per_octave);
        c.amplitude = b - 0.25 * (a - d) * offset;
      }
    }
    c.freq_hz = std::clamp(c.freq_hz, cfg.f_min_hz, cfg.f_max_hz);
    est.candidates.push_back(c);
  }
  if (est.candidates.empty()) return est;
  const auto& best = est.candidates.front();
  est.voicing_prob = voicing_probability(mean, best.amplitude);
  if (est.voicing_prob >= cfg.voicing_threshold) est.f0_hz = best.freq_hz;
  return est;
}

// Locates successive glottal-cycle marks by amplitude-peak picking. The first
// mark is the largest sample in the first expected period; each following mark
// is the largest sample within +/-25% of one period after the previous one.
inline PeriodSequence track_periods(std::span<const double> frame, double sample_rate_hz, double f0_hz,
                                    const PitchConfig& cfg = {}) {
  if (!(f0_hz > 0.0)) throw InvalidInput("track_periods: unvoiced frame (f0 = 0)");
  const double period = sample_rate_hz / f0_hz;
  const auto n = static_cast<long>(frame.size());
  const double min_period = sample_rate_hz / cfg.f_max_hz;
  const double max_period = sample_rate_hz / cfg.f_min_hz;

  auto argmax = [&](long lo, long hi) {  // inclusive range
    long best = lo;
    for (long i = lo + 1; i <= hi; ++i) {
      if (frame[static_cast<std::size_t>(i)] > frame[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
  };
  auto refine = [&](long i) {
    if (i <= 0 || i + 1 >= n) return static_cast<double>(i);
    const double a = frame[static_cast<std::size_t>(i - 1)];
    const double b = frame[static_cast<std::size_t>(i)];
    const double c = frame[static_cast<std::size_t>(i + 1)];
    const double denom = a - 2.0 * b + c;
    if (denom >= 0.0) return static_cast<double>(i);
    return static_cast<double>(i) + std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  };

  std::vector<long> marks;
  std::vector<double> positions;
  const long first_hi = std::min(n - 1, static_cast<long>(std::ceil(period)) - 1);
  if (first_hi < 0) throw InvalidInput("track_periods: empty frame");
  marks.push_back(argmax(0, first_hi));
  positions.push_back(refine(marks.back()));
  while (true) {
    const double prev = static_cast<double>(marks.back());
    const double lo_f = std::max(prev + 0.75 * period, prev + min_period);
    const double hi_f = std::min(prev + 1.25 * period, prev + max_period);
    const auto lo = static_cast<long>(std::ceil(lo_f));
    const auto hi = static_cast<long>(std::floor(hi_f));
    if (hi > n - 1 || lo > hi) break;
    marks.push_back(argmax(lo, hi));
    positions.push_back(refine(marks.back()));
  }

  PeriodSequence seq;
  for (std::size_t i = 1; i < marks.size(); ++i) {
    seq.periods_s.push_back((positions[i] - positions[i - 1]) / sample_rate_hz);
    const auto a = frame.begin() + marks[i - 1];
    const auto b = frame.begin() + marks[i];
    const auto [mn, mx] = std::minmax_element(a, b);
    seq.peak_amps.push_back(*mx - *mn);
  }
  if (seq.size() < 3) {
    throw InvalidInput("track_periods: fewer than 3 pitch periods found (" + std::to_string(seq.size()) + ")");
  }
  return seq;
}

}  // namespace lctid::pitch
