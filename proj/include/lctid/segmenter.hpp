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

// Fixed-length segmentation of variable-length feature matrices and
// segment-averaged utterance decisions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lctid/corpus.hpp"
#include "lctid/error.hpp"
#include "lctid/features.hpp"
#include "lctid/matrix.hpp"

namespace lctid::segmenter {

struct Segment {
  features::FeatureMatrix matrix;  // exactly segment_frames columns
  std::size_t pad_frames = 0;      // trailing zero columns
  std::string parent_id;
  std::optional<Dialect> label;
};

// First quartile as the ((n+1)/4)-th smallest observation (1-based).
// A fractional position interpolates linearly between its neighbours and is
// clamped to the first/last observation.
inline double first_quartile(std::vector<double> durations) {
  if (durations.empty()) throw InvalidInput("first_quartile: empty input");
  std::sort(durations.begin(), durations.end());
  const double n = static_cast<double>(durations.size());
  const double q = (n + 1.0) / 4.0;
  if (q <= 1.0) return durations.front();
  if (q >= n) return durations.back();
  const auto lo = static_cast<std::size_t>(std::floor(q));  // 1-based
  const double frac = q - static_cast<double>(lo);
  const double a = durations[lo - 1];
  if (frac == 0.0) return a;
  return a + frac * (durations[lo] - a);
}

// Number of hop-grid frames in a segment of `seconds`.
inline std::size_t frames_for_duration(double seconds, double hop_ms = 10.0) {
  if (!(seconds > 0.0)) throw InvalidInput("segment duration must be positive");
  const auto frames = static_cast<std::size_t>(std::llround(seconds * 1000.0 / hop_ms));
  if (frames == 0) throw InvalidInput("segment duration shorter than one hop");
  return frames;
}

// Splits `m` into ceil(frames / segment_frames) segments; only the last one is
// zero-padded, by segment_frames - (length of the last piece).
inline std::vector<Segment> split(const features::FeatureMatrix& m, std::size_t segment_frames,
                                  std::optional<Dialect> label = std::nullopt) {
  if (m.num_frames() == 0 || m.num_channels() == 0) throw InvalidInput("split: empty feature matrix");
  if (segment_frames == 0) throw InvalidInput("split: segment length must be positive");
  const std::size_t total = m.num_frames();
  const std::size_t count = (total + segment_frames - 1) / segment_frames;
  std::vector<Segment> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Segment seg;
    seg.parent_id = m.source_id;
    seg.label = label;
    seg.matrix.channel_ids = m.channel_ids;
    seg.matrix.hop_ms = m.hop_ms;
    seg.matrix.source_id = m.source_id;
    seg.matrix.values = Matrix<double>(m.num_channels(), segment_frames, 0.0);
    const std::size_t begin = s * segment_frames;
    const std::size_t len = std::min(segment_frames, total - begin);
    for (std::size_t r = 0; r < m.num_channels(); ++r) {
      const auto src = m.values.row(r).subspan(begin, len);
      std::copy(src.begin(), src.end(), seg.matrix.values.row(r).begin());
    }
    seg.pad_frames = segment_frames - len;
    out.push_back(std::move(seg));
  }
  return out;
}

inline std::vector<Segment> split(const features::FeatureMatrix& m, double segment_seconds,
                                  std::optional<Dialect> label = std::nullopt) {
  return split(m, frames_for_duration(segment_seconds, m.hop_ms), label);
}

// Reassembles the unpadded frames of consecutive segments.
inline features::FeatureMatrix unsplit(std::span<const Segment> segments) {
  if (segments.empty()) throw InvalidInput("unsplit: no segments");
  features::FeatureMatrix out;
  const auto& first = segments.front().matrix;
  out.channel_ids = first.channel_ids;
  out.hop_ms = first.hop_ms;
  out.source_id = first.source_id;
  std::size_t total = 0;
  for (const auto& s : segments) total += s.matrix.num_frames() - s.pad_frames;
  out.values = Matrix<double>(first.num_channels(), total);
  std::size_t at = 0;
  for (const auto& s : segments) {
    const std::size_t len = s.matrix.num_frames() - s.pad_frames;
    for (std::size_t r = 0; r < first.num_channels(); ++r) {
      const auto src = s.matrix.values.row(r).first(len);
      std::copy(src.begin(), src.end(), out.values.row(r).begin() + static_cast<std::ptrdiff_t>(at));
    }
    at += len;
  }
  return out;
}

// Utterance decision from per-segment class activations (one row per segment,
// columns LT, CT): the class with the larger summed activation. Ties go to LT.
inline Dialect aggregate(const Matrix<double>& activations) {
  if (activations.rows() == 0) throw InvalidInput("aggregate: no segments");
  if (activations.cols() != kNumDialects) throw ShapeMismatch("aggregate: expected 2 activation columns");
  double lt = 0.0, ct = 0.0;
  for (std::size_t s = 0; s < activations.rows(); ++s) {
    lt += activations(s, 0);
    ct += activations(s, 1);
  }
  return ct > lt ? Dialect::kCT : Dialect::kLT;
}

}  // namespace lctid::segmenter
