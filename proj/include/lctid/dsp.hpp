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

// Framing, windowing, magnitude spectra and the Bark transform shared by the
// feature extractors.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <numbers>
#include <span>
#include <vector>

#include "lctid/error.hpp"
#include "lctid/matrix.hpp"
#include "lctid/wav.hpp"

namespace lctid::dsp {

struct FrameSeries {
  Matrix<double> frames;  // num_frames x frame_len
  double frame_ms = 0.0;
  double hop_ms = 0.0;
  double sample_rate_hz = 0.0;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t frame_len() const { return frames.cols(); }
};

// Magnitudes of FFT bins 1..K/2 (the DC bin is dropped): magnitudes[j] belongs
// to bin j + 1, at frequency (j + 1) * bin_hz.
struct Spectrum {
  std::vector<double> magnitudes;
  double bin_hz = 0.0;
  std::size_t fft_size = 0;

  double bin_frequency(std::size_t j) const { return static_cast<double>(j + 1) * bin_hz; }
};

inline std::size_t samples_for_ms(double ms, double sample_rate_hz) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate_hz / 1000.0));
}

inline std::size_t num_frames_for(std::size_t signal_len, std::size_t frame_len, std::size_t hop) {
  if (signal_len < frame_len) return 0;
  return (signal_len - frame_len) / hop + 1;
}

inline FrameSeries frame_signal(const Waveform& w, double frame_ms, double hop_ms) {
  if (!(frame_ms > 0.0) || !(hop_ms > 0.0)) throw InvalidInput("frame and hop must be positive");
  const std::size_t frame_len = samples_for_ms(frame_ms, w.sample_rate_hz);
  const std::size_t hop = samples_for_ms(hop_ms, w.sample_rate_hz);
  if (frame_len == 0 || hop == 0) throw InvalidInput("frame or hop shorter than one sample");
  if (w.samples.size() < frame_len) {
    throw InvalidInput("signal of " + std::to_string(w.samples.size()) +
                       " samples is shorter than one " + std::to_string(frame_ms) + " ms frame");
  }
  FrameSeries fs;
  fs.frame_ms = frame_ms;
  fs.hop_ms = hop_ms;
  fs.sample_rate_hz = w.sample_rate_hz;
  const std::size_t n = num_frames_for(w.samples.size(), frame_len, hop);
  fs.frames = Matrix<double>(n, frame_len);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(i * hop), frame_len, fs.frames.row(i).begin());
  }
  return fs;
}

inline bool is_power_of_two(std::size_t k) { return k != 0 && (k & (k - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t k = 1;
  while (k < n) k <<= 1;
  return k;
}

// Twiddle factors exp(-2*pi*i*k/n) for k < n/2, cached per size on the
// calling thread.
inline const std::vector<std::complex<double>>& fft_twiddles(std::size_t n) {
  thread_local std::deque<std::vector<std::complex<double>>> cache;
  for (const auto& t : cache) {
    if (t.size() == n / 2) return t;
  }
  std::vector<std::complex<double>> t(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    t[k] = {std::cos(ang), std::sin(ang)};
  }
  cache.push_back(std::move(t));
  return cache.back();
}

// In-place iterative radix-2 FFT (forward, no scaling).
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw InvalidInput("FFT size must be a power of two");
  if (n == 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto& tw = fft_twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + half] * tw[k * stride];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Hamming window of length n, cached per length on the calling thread.
inline const std::vector<double>& hamming_window(std::size_t n) {
  thread_local std::deque<std::vector<double>> cache;
  for (const auto& w : cache) {
    if (w.size() == n) return w;
  }
  std::vector<double> w(n, 1.0);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
  }
  cache.push_back(std::move(w));
  return cache.back();
}

// Windows `frame` with a Hamming window, zero-pads to `fft_size`, and returns
// the full complex transform.
inline std::vector<std::complex<double>> windowed_fft(std::span<const double> frame, std::size_t fft_size) {
  if (!is_power_of_two(fft_size)) throw InvalidInput("FFT size must be a power of two");
  if (fft_size < frame.size()) {
    throw InvalidInput("FFT size " + std::to_string(fft_size) + " is smaller than the frame length " +
                       std::to_string(frame.size()));
  }
  const auto& win = hamming_window(frame.size());
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i] * win[i];
  fft(buf);
  return buf;
}

inline Spectrum magnitude_spectrum(std::span<const double> frame, std::size_t fft_size,
                                   double sample_rate_hz = kCanonicalSampleRate) {
  const auto buf = windowed_fft(frame, fft_size);
  Spectrum s;
  s.fft_size = fft_size;
  s.bin_hz = sample_rate_hz / static_cast<double>(fft_size);
  s.magnitudes.resize(fft_size / 2);
  for (std::size_t k = 1; k <= fft_size / 2; ++k) s.magnitudes[k - 1] = std::abs(buf[k]);
  return s;
}

// Traunmüller's closed form, clamped at zero so that 0 Hz maps to 0 bark and
// the transform stays nondecreasing (the raw formula dips below zero under
// about 40 Hz).
inline double hz_to_bark(double f_hz) {
  if (f_hz < 0.0 || std::isnan(f_hz)) throw InvalidInput("hz_to_bark: negative frequency");
  return std::max(0.0, 26.81 * f_hz / (1960.0 + f_hz) - 0.53);
}

}  // namespace lctid::dsp
