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

// Training and evaluation protocol: metrics, stratified splits, the
// train/evaluate pipeline over segmented feature matrices, accuracy ranking
// with shared ranks, one-round RFE, IFE, and feature combination runs.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lctid/cnn.hpp"
#include "lctid/corpus.hpp"
#include "lctid/error.hpp"
#include "lctid/features.hpp"
#include "lctid/io.hpp"
#include "lctid/random.hpp"
#include "lctid/segmenter.hpp"
#include "lctid/wav.hpp"

namespace lctid::experiments {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Harmonic mean of precision and recall (0 when both are 0).
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// Confusion counts indexed [true class][predicted class].
using Confusion = std::array<std::array<std::size_t, kNumDialects>, kNumDialects>;

struct EvalReport {
  std::array<ClassMetrics, kNumDialects> per_class{};
  Confusion confusion{};
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;

  const ClassMetrics& of(Dialect d) const { return per_class[index_of(d)]; }

  // Every ratio is a single division of integer counts, so it equals the
  // exactly rounded rational value. F1 uses 2tp / (2tp + fp + fn), which is
  // 2PR / (P + R) without intermediate rounding.
  static EvalReport from_confusion(const Confusion& c) {
    EvalReport r;
    r.confusion = c;
    for (std::size_t t = 0; t < kNumDialects; ++t) {
      for (std::size_t p = 0; p < kNumDialects; ++p) r.total += c[t][p];
      r.correct += c[t][t];
    }
    auto ratio = [](std::size_t num, std::size_t den) {
      return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    for (std::size_t k = 0; k < kNumDialects; ++k) {
      auto& m = r.per_class[k];
      m.tp = c[k][k];
      for (std::size_t j = 0; j < kNumDialects; ++j) {
        if (j == k) continue;
        m.fn += c[k][j];
        m.fp += c[j][k];
      }
      m.tn = r.total - m.tp - m.fn - m.fp;
      m.precision = ratio(m.tp, m.tp + m.fp);
      m.recall = ratio(m.tp, m.tp + m.fn);
      m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    }
    r.accuracy = ratio(r.correct, r.total);
    return r;
  }

  static EvalReport from_decisions(std::span<const Dialect> truth, std::span<const Dialect> predicted) {
    if (truth.size() != predicted.size()) throw ShapeMismatch("from_decisions: length mismatch");
    Confusion c{};
    for (std::size_t i = 0; i < truth.size(); ++i) ++c[index_of(truth[i])][index_of(predicted[i])];
    return from_confusion(c);
  }

  // Sums the confusion counts of several reports.
  static EvalReport pooled(std::span<const EvalReport> reports) {
    Confusion c{};
    for (const auto& r : reports) {
      for (std::size_t t = 0; t < kNumDialects; ++t) {
        for (std::size_t p = 0; p < kNumDialects; ++p) c[t][p] += r.confusion[t][p];
      }
    }
    return from_confusion(c);
  }
};

inline json to_json(const EvalReport& r) {
  json j;
  for (std::size_t k = 0; k < kNumDialects; ++k) {
    const auto& m = r.per_class[k];
    j[std::string(to_string(static_cast<Dialect>(k)))] = {{"precision", m.precision}, {"recall", m.recall},
                                                          {"f1", m.f1},               {"tp", m.tp},
                                                          {"fp", m.fp},               {"fn", m.fn},
                                                          {"tn", m.tn}};
  }
  j["accuracy"] = r.accuracy;
  j["correct"] = r.correct;
  j["total"] = r.total;
  return j;
}

// ---------------------------------------------------------------------------
// Parallel execution

// Runs fn(0) .. fn(n-1) on up to `jobs` threads. Results must be written to
// per-index slots by the caller, so the outcome does not depend on
// scheduling. The exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (n == 0) return;
  jobs = std::clamp<std::size_t>(jobs, 1, n);
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Data

struct LabeledMatrix {
  std::string id;
  Dialect label = Dialect::kLT;
  features::FeatureMatrix matrix;
};

using Dataset = std::vector<LabeledMatrix>;

// Extracts `set` for every utterance of the manifest. Failures name the
// utterance.
inline Dataset extract_dataset(const CorpusManifest& manifest, const features::FeatureSet& set,
                               const features::FeatureConfig& cfg = {}, std::size_t jobs = 1) {
  Dataset out(manifest.records.size());
  parallel_for(manifest.records.size(), jobs, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    try {
      out[i] = {rec.id, rec.dialect, features::extract_matrix(read_wav(rec.audio_path), set, cfg, rec.id)};
    } catch (const Error& e) {
      throw InvalidInput("utterance " + rec.id + ": " + e.what());
    }
  });
  return out;
}

inline Dataset select(const Dataset& data, const features::FeatureSet& set) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back({d.id, d.label, features::select_channels(d.matrix, set)});
  return out;
}

inline std::vector<Dialect> labels_of(const Dataset& data) {
  std::vector<Dialect> l;
  l.reserve(data.size());
  for (const auto& d : data) l.push_back(d.label);
  return l;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::array<std::vector<std::size_t>, kNumDialects> shuffled_by_class(std::span<const Dialect> labels,
                                                                            std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumDialects> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[index_of(labels[i])].push_back(i);
  for (std::size_t c = 0; c < kNumDialects; ++c) {
    Rng rng(derive_seed(seed, c));
    rng.shuffle(by_class[c].begin(), by_class[c].end());
  }
  return by_class;
}

}  // namespace detail

// Stratified k-fold: each class is shuffled with the seed and dealt round
// robin into k validation folds. Indices keep corpus order within a fold.
inline std::vector<SplitIndices> kfold_indices(std::span<const Dialect> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidInput("kfold: k must be at least 2");
  const auto by_class = detail::shuffled_by_class(labels, seed);
  for (std::size_t c = 0; c < kNumDialects; ++c) {
    if (by_class[c].size() < k) {
      throw InvalidInput("kfold: too few utterances: class " + std::string(to_string(static_cast<Dialect>(c))) +
                         " has " + std::to_string(by_class[c].size()) + ", need at least k = " + std::to_string(k));
    }
  }
  std::vector<std::size_t> fold_of(labels.size());
  for (const auto& cls : by_class) {
    for (std::size_t j = 0; j < cls.size(); ++j) fold_of[cls[j]] = j % k;
  }
  std::vector<SplitIndices> out(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? out[f].test : out[f].train).push_back(i);
  }
  return out;
}

// Stratified holdout: round(test_fraction * n_c) utterances of each class,
// at least one and leaving at least one for training.
inline SplitIndices holdout_indices(std::span<const Dialect> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidInput("test fraction must lie in (0, 1)");
  const auto by_class = detail::shuffled_by_class(labels, seed);
  std::vector<bool> is_test(labels.size(), false);
  for (std::size_t c = 0; c < kNumDialects; ++c) {
    const std::size_t n = by_class[c].size();
    if (n < 2) {
      throw InvalidInput("holdout: class " + std::string(to_string(static_cast<Dialect>(c))) +
                         " needs at least 2 utterances");
    }
    const auto n_test = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))), 1, n - 1);
    for (std::size_t j = 0; j < n_test; ++j) is_test[by_class[c][j]] = true;
  }
  SplitIndices s;
  for (std::size_t i = 0; i < labels.size(); ++i) (is_test[i] ? s.test : s.train).push_back(i);
  return s;
}

struct ManifestFold {
  CorpusManifest train;
  CorpusManifest validation;
};

inline std::vector<ManifestFold> kfold(const CorpusManifest& manifest, std::size_t k, std::uint64_t seed) {
  std::vector<Dialect> labels;
  for (const auto& r : manifest.records) labels.push_back(r.dialect);
  std::vector<ManifestFold> out;
  for (const auto& s : kfold_indices(labels, k, seed)) {
    ManifestFold f;
    for (auto i : s.train) f.train.records.push_back(manifest.records[i]);
    for (auto i : s.test) f.validation.records.push_back(manifest.records[i]);
    f.train.recompute_totals();
    f.validation.recompute_totals();
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  cnn::ArchId arch = cnn::ArchId::kCA03;
  cnn::TrainConfig train{.optimizer = cnn::Optimizer::kSgd};
  std::size_t folds = 4;            // k-fold CV; 1 = single stratified holdout
  double test_fraction = 0.2;       // holdout only
  double early_stop_fraction = 0.1; // of the training utterances; 0 disables early stopping
  std::optional<double> segment_seconds;  // default: first quartile of training durations
  std::uint64_t seed = 0;
  std::size_t jobs = 1;  // does not influence results

  void validate() const {
    train.validate();
    if (folds == 0) throw InvalidInput("folds must be >= 1");
    if (!(early_stop_fraction >= 0.0 && early_stop_fraction < 1.0)) {
      throw InvalidInput("early_stop_fraction must lie in [0, 1)");
    }
    if (segment_seconds && !(*segment_seconds > 0.0)) throw InvalidInput("segment_seconds must be positive");
    if (jobs == 0) throw InvalidInput("jobs must be >= 1");
  }
};

inline json to_json(const ExperimentConfig& c) {
  return json{{"arch", cnn::to_string(c.arch)},
              {"optimizer", cnn::to_string(c.train.optimizer)},
              {"batch_size", c.train.effective_batch()},
              {"learning_rate", c.train.learning_rate},
              {"epochs", c.train.epochs},
              {"conv_dropout", c.train.conv_dropout},
              {"dense_dropout", c.train.dense_dropout},
              {"patience", c.train.patience},
              {"folds", c.folds},
              {"test_fraction", c.test_fraction},
              {"early_stop_fraction", c.early_stop_fraction},
              {"segment_seconds", c.segment_seconds ? json(*c.segment_seconds) : json(nullptr)},
              {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Training and evaluation of one system

struct TrainedSystem {
  cnn::Model<float> model;
  features::NormStats norm;
  std::size_t segment_frames = 0;
  cnn::TrainHistory history;
};

// channels x frames -> frames x channels.
inline cnn::Tensor2<float> to_tensor(const features::FeatureMatrix& m) {
  cnn::Tensor2<float> t(m.num_frames(), m.num_channels());
  for (std::size_t c = 0; c < m.num_channels(); ++c) {
    for (std::size_t f = 0; f < m.num_frames(); ++f) t(f, c) = static_cast<float>(m.values(c, f));
  }
  return t;
}

inline json to_json(const TrainedSystem& s) {
  std::vector<std::string> ids;
  for (auto id : s.norm.channel_ids) ids.push_back(features::to_string(id));
  return json{{"channels", ids}, {"mean", s.norm.mean}, {"stddev", s.norm.stddev}, {"segment_frames", s.segment_frames}};
}

// Restores the normalization and segment length stored by to_json.
inline void from_json(const json& j, TrainedSystem& s) {
  try {
    s.norm.channel_ids.clear();
    for (const auto& name : j.at("channels")) {
      const auto id = features::parse_feature_id(name.get<std::string>());
      if (!id) throw CorruptFile("unknown channel " + name.get<std::string>());
      s.norm.channel_ids.push_back(*id);
    }
    s.norm.mean = j.at("mean").get<std::vector<double>>();
    s.norm.stddev = j.at("stddev").get<std::vector<double>>();
    s.segment_frames = j.at("segment_frames").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("normalization file: ") + e.what());
  }
  if (s.norm.mean.size() != s.norm.channel_ids.size() || s.norm.stddev.size() != s.norm.channel_ids.size() ||
      s.segment_frames == 0) {
    throw CorruptFile("normalization file: inconsistent sizes");
  }
}

namespace detail {

struct SegmentSet {
  std::vector<cnn::Tensor2<float>> tensors;
  std::vector<int> labels;

  std::vector<cnn::Example<float>> examples() const {
    std::vector<cnn::Example<float>> ex;
    for (std::size_t i = 0; i < tensors.size(); ++i) ex.push_back({&tensors[i], labels[i]});
    return ex;
  }
};

inline SegmentSet segment_all(const Dataset& data, std::span<const std::size_t> idx, const features::NormStats& norm,
                              std::size_t segment_frames) {
  SegmentSet s;
  for (auto i : idx) {
    for (auto& seg : segmenter::split(features::apply_norm(data[i].matrix, norm), segment_frames)) {
      s.tensors.push_back(to_tensor(seg.matrix));
      s.labels.push_back(static_cast<int>(index_of(data[i].label)));
    }
  }
  return s;
}

}  // namespace detail

// Fits normalization on the training utterances, sets the segment length to
// the first quartile of their durations, segments, builds the network and
// trains it. A stratified slice of the training utterances drives early
// stopping when early_stop_fraction > 0.
inline TrainedSystem train_system(const Dataset& data, std::span<const std::size_t> train_idx,
                                  const ExperimentConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  if (train_idx.empty()) throw InvalidInput("train_system: no training utterances");
  std::vector<std::size_t> fit(train_idx.begin(), train_idx.end());
  std::vector<std::size_t> val;
  if (cfg.early_stop_fraction > 0.0) {
    std::vector<Dialect> labels;
    for (auto i : train_idx) labels.push_back(data[i].label);
    const auto inner = holdout_indices(labels, cfg.early_stop_fraction, derive_seed(run_seed, 1));
    fit.clear();
    for (auto j : inner.train) fit.push_back(train_idx[j]);
    for (auto j : inner.test) val.push_back(train_idx[j]);
  }

  TrainedSystem sys;
  std::vector<features::FeatureMatrix> fit_mats;
  std::vector<double> durations;
  for (auto i : train_idx) durations.push_back(static_cast<double>(data[i].matrix.num_frames()) * data[i].matrix.hop_ms / 1000.0);
  for (auto i : fit) fit_mats.push_back(data[i].matrix);
  sys.norm = features::fit_norm(fit_mats);
  const double hop = data[train_idx.front()].matrix.hop_ms;
  sys.segment_frames = segmenter::frames_for_duration(
      cfg.segment_seconds ? *cfg.segment_seconds : segmenter::first_quartile(durations), hop);

  const auto fit_set = detail::segment_all(data, fit, sys.norm, sys.segment_frames);
  const auto val_set = detail::segment_all(data, val, sys.norm, sys.segment_frames);

  auto spec = cnn::arch_spec(cfg.arch);
  spec.conv_dropout = cfg.train.conv_dropout;
  spec.dense_dropout = cfg.train.dense_dropout;
  sys.model = cnn::build<float>(spec, sys.segment_frames, sys.norm.channel_ids.size(), derive_seed(run_seed, 2));
  auto tcfg = cfg.train;
  tcfg.seed = derive_seed(run_seed, 3);
  const auto fit_ex = fit_set.examples();
  const auto val_ex = val_set.examples();
  sys.history = cnn::train<float>(sys.model, fit_ex, tcfg, val_ex);
  return sys;
}

// Throws ShapeMismatch unless the system can score `m`.
inline void check_compatible(const TrainedSystem& sys, const features::FeatureMatrix& m) {
  if (m.channel_ids != sys.norm.channel_ids) {
    std::string want, got;
    for (auto id : sys.norm.channel_ids) want += (want.empty() ? "" : ",") + features::to_string(id);
    for (auto id : m.channel_ids) got += (got.empty() ? "" : ",") + features::to_string(id);
    throw ShapeMismatch("feature channels [" + got + "] do not match the model's [" + want + "]");
  }
  if (sys.model.input != cnn::Shape{sys.segment_frames, m.num_channels()}) {
    throw ShapeMismatch("model input " + cnn::to_string(sys.model.input) + " does not match " +
                        std::to_string(sys.segment_frames) + " frames x " + std::to_string(m.num_channels()) +
                        " channels");
  }
}

// Per-segment activations (segments x 2).
inline Matrix<double> segment_activations(const TrainedSystem& sys, const features::FeatureMatrix& m) {
  check_compatible(sys, m);
  const auto segs = segmenter::split(features::apply_norm(m, sys.norm), sys.segment_frames);
  Matrix<double> act(segs.size(), kNumDialects);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto p = cnn::forward(sys.model, to_tensor(segs[s].matrix));
    for (std::size_t k = 0; k < kNumDialects; ++k) act(s, k) = p.data()[k];
  }
  return act;
}

inline Dialect predict(const TrainedSystem& sys, const features::FeatureMatrix& m) {
  return segmenter::aggregate(segment_activations(sys, m));
}

// Utterance-level evaluation. All matrices are shape-checked before any is
// scored.
inline EvalReport evaluate(const TrainedSystem& sys, const Dataset& data, std::span<const std::size_t> idx) {
  if (idx.empty()) throw InvalidInput("evaluate: empty test set");
  for (auto i : idx) check_compatible(sys, data[i].matrix);
  std::vector<Dialect> truth, pred;
  for (auto i : idx) {
    truth.push_back(data[i].label);
    pred.push_back(predict(sys, data[i].matrix));
  }
  return EvalReport::from_decisions(truth, pred);
}

inline EvalReport evaluate(const TrainedSystem& sys, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate(sys, data, all);
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  std::string run_id;
  json config;
  features::FeatureSet featureset;
  std::vector<EvalReport> folds;
  double mean_accuracy = 0.0;

  EvalReport pooled() const { return EvalReport::pooled(folds); }
};

// Stable identifier derived from the configuration and feature set.
inline std::string make_run_id(const json& config, const features::FeatureSet& set) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump() + "|" + set.to_string()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
  return out;
}

inline json to_json(const RunResult& r) {
  json folds = json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  return json{{"run_id", r.run_id},
              {"config", r.config},
              {"featureset", r.featureset.to_string()},
              {"folds", folds},
              {"mean_accuracy", r.mean_accuracy}};
}

inline void write_results(const RunResult& r, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_json(r).dump(2) + "\n");
}

inline std::vector<SplitIndices> make_splits(std::span<const Dialect> labels, const ExperimentConfig& cfg) {
  if (cfg.folds == 1) return {holdout_indices(labels, cfg.test_fraction, derive_seed(cfg.seed, 0))};
  return kfold_indices(labels, cfg.folds, derive_seed(cfg.seed, 0));
}

struct RunCounter {
  std::size_t evaluations = 0;  // feature-set runs
  std::size_t trainings = 0;    // individual network trainings (runs x splits)
};

// Trains and evaluates every feature set on the same splits and seeds, in
// parallel over (set, split) pairs.
inline std::vector<RunResult> run_many(const Dataset& data, std::span<const features::FeatureSet> sets,
                                       const ExperimentConfig& cfg, RunCounter* counter = nullptr) {
  cfg.validate();
  if (data.empty()) throw InvalidInput("run: empty dataset");
  const auto labels = labels_of(data);
  const auto splits = make_splits(labels, cfg);
  std::vector<Dataset> selected;
  for (const auto& s : sets) selected.push_back(select(data, s));
  std::vector<RunResult> results(sets.size());
  const json cj = to_json(cfg);
  for (std::size_t r = 0; r < sets.size(); ++r) {
    results[r].config = cj;
    results[r].featureset = sets[r];
    results[r].run_id = make_run_id(cj, sets[r]);
    results[r].folds.resize(splits.size());
  }
  const std::size_t n_tasks = sets.size() * splits.size();
  std::vector<std::string> failures(n_tasks);
  parallel_for(n_tasks, cfg.jobs, [&](std::size_t t) {
    const std::size_t r = t / splits.size(), f = t % splits.size();
    try {
      const auto sys = train_system(selected[r], splits[f].train, cfg, derive_seed(cfg.seed, 100 + f));
      results[r].folds[f] = evaluate(sys, selected[r], splits[f].test);
    } catch (const Diverged& e) {
      failures[t] = "run " + sets[r].to_string() + " split " + std::to_string(f) + ": " + e.what();
    }
  });
  std::string msg;
  for (const auto& f : failures) {
    if (!f.empty()) msg += (msg.empty() ? "" : "; ") + f;
  }
  if (!msg.empty()) throw Diverged(msg);
  for (auto& r : results) {
    double sum = 0.0;
    for (const auto& f : r.folds) sum += f.accuracy;
    r.mean_accuracy = sum / static_cast<double>(r.folds.size());
  }
  if (counter) {
    counter->evaluations += sets.size();
    counter->trainings += n_tasks;
  }
  return results;
}

inline RunResult run_experiment(const Dataset& data, const features::FeatureSet& set, const ExperimentConfig& cfg,
                                RunCounter* counter = nullptr) {
  return run_many(data, std::span(&set, 1), cfg, counter).front();
}

// ---------------------------------------------------------------------------
// Ranking

struct RankEntry {
  std::string feature;
  double accuracy = 0.0;
  int rank = 0;
};

struct GapStats {
  double min = 0.0, max = 0.0, mean = 0.0;
  std::size_t count = 0;
};

struct RankingTable {
  std::vector<RankEntry> rows;  // in input order
  GapStats gaps;
  std::vector<RunResult> runs;
  std::size_t evaluations = 0;

  int rank_of(std::string_view feature) const {
    for (const auto& r : rows) {
      if (r.feature == feature) return r.rank;
    }
    throw InvalidInput("no ranking row for " + std::string(feature));
  }

  std::string to_csv() const {
    std::string out = "feature,accuracy,rank\n";
    for (const auto& r : rows) {
      out += r.feature + ",";
      features::append_number(out, r.accuracy);
      out += "," + std::to_string(r.rank) + "\n";
    }
    return out;
  }
};

// kAscending: lower accuracy ranks first (RFE, where a large drop marks an
// important feature). kDescending: higher accuracy ranks first (IFE).
enum class RankOrder { kAscending, kDescending };

// Standard competition ranking: equal accuracies share a rank and the next
// rank skips by the size of the tie. Gap statistics are taken over the
// absolute accuracy differences between consecutive rank groups.
inline RankingTable rank_by_accuracy(std::span<const std::pair<std::string, double>> accuracies, RankOrder order) {
  RankingTable t;
  for (const auto& [name, acc] : accuracies) {
    if (!std::isfinite(acc)) throw InvalidInput("rank_by_accuracy: non-finite accuracy for " + name);
    t.rows.push_back({name, acc, 0});
  }
  auto better = [order](double a, double b) { return order == RankOrder::kAscending ? a < b : a > b; };
  for (auto& row : t.rows) {
    int ahead = 0;
    for (const auto& other : t.rows) ahead += better(other.accuracy, row.accuracy);
    row.rank = ahead + 1;
  }
  std::vector<double> levels;
  for (const auto& r : t.rows) levels.push_back(r.accuracy);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (levels.size() >= 2) {
    t.gaps.min = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i = 1; i < levels.size(); ++i) {
      const double g = levels[i] - levels[i - 1];
      t.gaps.min = std::min(t.gaps.min, g);
      t.gaps.max = std::max(t.gaps.max, g);
      sum += g;
    }
    t.gaps.count = levels.size() - 1;
    t.gaps.mean = sum / static_cast<double>(t.gaps.count);
  }
  return t;
}

// One round of recursive feature elimination: each feature is removed in
// turn and the remaining set is evaluated.
inline RankingTable rfe_round(const Dataset& data, const features::FeatureSet& set, const ExperimentConfig& cfg) {
  if (set.size() < 2) throw InvalidInput("rfe_round: need at least 2 features");
  std::vector<features::FeatureSet> sets;
  for (auto id : set.ids()) sets.push_back(set.without(id));
  RunCounter counter;
  auto runs = run_many(data, sets, cfg, &counter);
  std::vector<std::pair<std::string, double>> acc;
  for (std::size_t i = 0; i < runs.size(); ++i) acc.emplace_back(features::to_string(set.ids()[i]), runs[i].mean_accuracy);
  auto t = rank_by_accuracy(acc, RankOrder::kAscending);
  t.runs = std::move(runs);
  t.evaluations = counter.evaluations;
  return t;
}

// Recursive elimination until `keep` features remain, dropping the feature
// whose removal costs least (the worst rank) in each round. Returns the
// per-round tables.
inline std::vector<RankingTable> rfe(const Dataset& data, features::FeatureSet set, std::size_t keep,
                                     const ExperimentConfig& cfg) {
  if (keep < 1) throw InvalidInput("rfe: must keep at least one feature");
  std::vector<RankingTable> rounds;
  while (set.size() > keep) {
    auto t = rfe_round(data, set, cfg);
    // Worst rank; among ties the later feature id is eliminated first.
    const RankEntry* worst = &t.rows.front();
    for (const auto& r : t.rows) {
      if (r.rank >= worst->rank) worst = &r;
    }
    set = set.without(*features::parse_feature_id(worst->feature));
    rounds.push_back(std::move(t));
  }
  return rounds;
}

// Independent feature evaluation: each feature alone as a 1-channel input.
inline RankingTable ife(const Dataset& data, const features::FeatureSet& set, const ExperimentConfig& cfg) {
  if (set.empty()) throw InvalidInput("ife: need at least 1 feature");
  std::vector<features::FeatureSet> sets;
  for (auto id : set.ids()) sets.push_back(features::FeatureSet{id});
  RunCounter counter;
  auto runs = run_many(data, sets, cfg, &counter);
  std::vector<std::pair<std::string, double>> acc;
  for (std::size_t i = 0; i < runs.size(); ++i) acc.emplace_back(features::to_string(set.ids()[i]), runs[i].mean_accuracy);
  auto t = rank_by_accuracy(acc, RankOrder::kDescending);
  t.runs = std::move(runs);
  t.evaluations = counter.evaluations;
  return t;
}

inline features::FeatureSet combine(const features::FeatureSet& base, const features::FeatureSet& extra) {
  if (base.overlaps(extra)) {
    throw InvalidInput("combine: feature sets overlap (" + base.to_string() + " / " + extra.to_string() + ")");
  }
  auto merged = base;
  merged.merge(extra);
  return merged;
}

inline RunResult combine_and_eval(const Dataset& data, const features::FeatureSet& base,
                                  const features::FeatureSet& extra, const ExperimentConfig& cfg) {
  return run_experiment(data, combine(base, extra), cfg);
}

}  // namespace lctid::experiments
