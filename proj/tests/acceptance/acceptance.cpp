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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lctid/cnn.hpp"
#include "lctid/corpus.hpp"
#include "lctid/dsp.hpp"
#include "lctid/experiments.hpp"
#include "lctid/features.hpp"
#include "lctid/io.hpp"
#include "lctid/pitch.hpp"
#include "lctid/segmenter.hpp"

namespace {

using namespace lctid;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("lctid_accept_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome architecture() {
  const auto m = cnn::build<float>(cnn::ArchId::kCA02, 187, 10, 1);
  std::vector<std::size_t> counts;
  for (const auto& l : m.layers) {
    if (const auto n = cnn::weight_count<float>(l); n > 0) counts.push_back(n);
  }
  const std::vector<std::size_t> want_counts{2272, 7200, 6208, 12352, 2688000, 2050};
  // Distinct sizes along the chain: input length, then each layer that
  // changes the frame count or the flattened width.
  std::vector<std::size_t> chain{m.input.frames};
  for (const auto& s : m.shapes()) {
    const std::size_t v = s.frames == 1 ? s.channels : s.frames;
    if (v != chain.back()) chain.push_back(v);
  }
  const std::vector<std::size_t> want_chain{187, 181, 175, 87, 85, 83, 41, 2624, 1024, 2};
  std::ostringstream d;
  d << "counts";
  for (auto c : counts) d << ' ' << c;
  d << "; total " << m.num_params() << "; chain";
  for (auto c : chain) d << ' ' << c;
  const std::size_t total = std::accumulate(want_counts.begin(), want_counts.end(), std::size_t{0});
  return {counts == want_counts && chain == want_chain && m.num_params() == total, d.str()};
}

Outcome gradients() {
  cnn::ArchSpec spec;
  spec.kernels = {2, 2, 1, 1};
  spec.filters = {4, 4, 6, 6};
  spec.dense = {8};
  spec.conv_dropout = 0.25;
  spec.dense_dropout = 0.5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto m = cnn::build<double>(spec, 8, 2, seed);
    Rng rng(seed + 1000);
    for (auto& l : m.layers) {
      std::visit(cnn::Overloaded{
                     [&](cnn::Conv1D<double>& c) { for (auto& b : c.bias) b = rng.uniform(-0.1, 0.1); },
                     [&](cnn::Dense<double>& dl) { for (auto& b : dl.bias) b = rng.uniform(-0.1, 0.1); },
                     [](auto&) {},
                 },
                 l);
    }
    cnn::Tensor2<double> x(8, 2);
    for (auto& v : x.storage()) v = rng.normal();
    const auto r = cnn::grad_check(m, x, cnn::one_hot(static_cast<int>(seed % 2)), 1e-5, seed);
    worst = std::max(worst, r.max_relative_error);
    checked += r.num_checked;
  }
  return {worst < 1e-4, fmt("max relative error %.3g over %zu parameters", worst, checked)};
}

Outcome feature_oracles() {
  Rng rng(2026);
  constexpr double kFs = 16000.0;
  constexpr std::size_t kLen = 320, kFft = 512;
  double worst = 0.0;
  std::size_t zcr_mismatch = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };
  dsp::Spectrum prev;
  for (int f = 0; f < 1000; ++f) {
    std::vector<double> x(kLen);
    for (auto& v : x) v = rng.normal() * rng.uniform(0.01, 1.0);
    for (int z = 0; z < 10; ++z) x[rng.below(kLen)] = 0.0;
    const auto s = dsp::magnitude_spectrum(x, kFft, kFs);

    double e = 0.0;
    for (double v : x) e += v * v;
    worst = std::max(worst, rel(features::energy(x), e));

    std::size_t crossings = 0;
    for (std::size_t n = 1; n < kLen; ++n) {
      const bool c = x[n] != 0.0 ? x[n - 1] * x[n] < 0.0 : (n + 1 < kLen && x[n - 1] * x[n + 1] < 0.0);
      crossings += c;
    }
    zcr_mismatch += features::zcr(x, kFs) != static_cast<double>(crossings) / (static_cast<double>(kLen) / kFs);

    double num = 0.0, den = 0.0, bark = 0.0;
    for (std::size_t k = 1; k <= kFft / 2; ++k) {
      const double hz = static_cast<double>(k) * kFs / static_cast<double>(kFft);
      const double mag = s.magnitudes[k - 1];
      num += hz * mag;
      den += mag;
      bark += std::max(0.0, 26.81 * hz / (1960.0 + hz) - 0.53) * mag;
    }
    worst = std::max(worst, rel(features::spectral_centroid(s), num / den));
    worst = std::max(worst, rel(features::sharpness(s), bark / den));

    if (f > 0) {
      double mu_a = 0.0, mu_b = 0.0;
      for (std::size_t k = 0; k < kFft / 2; ++k) {
        mu_a += s.magnitudes[k] * s.magnitudes[k];
        mu_b += prev.magnitudes[k] * prev.magnitudes[k];
      }
      mu_a = std::sqrt(mu_a);
      mu_b = std::sqrt(mu_b);
      double flux = 0.0;
      for (std::size_t k = 0; k < kFft / 2; ++k) {
        const double d = s.magnitudes[k] / mu_a - prev.magnitudes[k] / mu_b;
        flux += d * d;
      }
      worst = std::max(worst, rel(features::spectral_flux(s, prev), flux));
    }
    prev = s;
  }

  // Period sequences with exactly representable answers.
  auto seq = [](std::vector<double> t, std::vector<double> a) {
    pitch::PeriodSequence p;
    p.periods_s = std::move(t);
    p.peak_amps = std::move(a);
    return p;
  };
  const auto p = seq({1, 3, 2, 2, 2}, {1, 3, 2, 2, 2});
  const auto flat = seq({4, 4, 4, 4}, {2, 2, 2, 2});
  const auto linear = seq({1, 2, 3, 4, 5}, {1, 1, 1, 1, 1});
  const bool exact = features::jitter(p) == 0.375 && features::jitter_derivative(p) == 1.0 / 3.0 &&
                     features::shimmer(p) == 0.375 && features::jitter(flat) == 0.0 &&
                     features::jitter_derivative(flat) == 0.0 && features::shimmer(flat) == 0.0 &&
                     features::jitter(linear) == 1.0 / 3.0 && features::jitter_derivative(linear) == 0.0;
  return {worst < 1e-9 && zcr_mismatch == 0 && exact,
          fmt("max relative error %.3g; zcr mismatches %zu; period arithmetic %s", worst, zcr_mismatch,
              exact ? "exact" : "WRONG")};
}

Outcome pitch_accuracy() {
  constexpr double kFs = 16000.0;
  constexpr std::size_t kFrame = 960;
  auto tone = [&](double f0, int first, int count) {
    std::vector<double> x(kFrame, 0.0);
    for (int h = first; h < first + count; ++h) {
      for (std::size_t i = 0; i < kFrame; ++i) x[i] += 0.2 * std::cos(2.0 * std::numbers::pi * f0 * h * static_cast<double>(i) / kFs);
    }
    return x;
  };
  std::vector<double> full, missing;
  for (double f0 = 80.0; f0 <= 400.0; f0 += 5.0) {
    full.push_back(std::abs(pitch::shs_estimate(dsp::magnitude_spectrum(tone(f0, 1, 6), 1024, kFs)).f0_hz - f0));
    missing.push_back(std::abs(pitch::shs_estimate(dsp::magnitude_spectrum(tone(f0, 2, 5), 1024, kFs)).f0_hz - f0));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  std::vector<double> all = full;
  all.insert(all.end(), missing.begin(), missing.end());
  const double m_all = median(all), m_full = median(full), m_missing = median(missing);
  return {m_all <= 2.0 && m_missing <= 2.0,
          fmt("median |error| %.3f Hz (with fundamental %.3f, missing fundamental %.3f) over %zu tones", m_all,
              m_full, m_missing, all.size())};
}

Outcome segmentation() {
  Rng rng(17);
  std::size_t failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t frames = 1 + rng.below(2000);
    const std::size_t seg = 1 + rng.below(400);
    features::FeatureMatrix m;
    m.values = Matrix<double>(2, frames);
    m.channel_ids = {features::FeatureId::kF0, features::FeatureId::kHnr};
    for (auto& v : m.values.storage()) v = rng.normal();
    const auto segs = segmenter::split(m, seg);
    const std::size_t n_s = static_cast<std::size_t>(std::ceil(static_cast<double>(frames) / static_cast<double>(seg)));
    const std::size_t last_len = frames - (n_s - 1) * seg;
    bool ok = segs.size() == n_s && segs.back().pad_frames == seg - last_len;
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) ok = ok && segs[i].pad_frames == 0;
    ok = ok && segmenter::unsplit(segs).values == m.values;
    failures += !ok;
  }
  const double q = segmenter::first_quartile({1, 2, 3, 4, 5, 6, 7});
  return {failures == 0 && q == 2.0, fmt("%zu/1000 durations violate the law; first quartile of 1..7 = %g", failures, q)};
}

Outcome end_to_end() {
  ScratchDir dir("e2e");
  corpus::SynthSpec spec;
  spec.num_utterances = 200;
  spec.output_dir = dir.path();
  const auto manifest = corpus::synth_corpus(spec, 2026);
  const auto data = experiments::extract_dataset(manifest, features::FeatureSet::handcrafted());
  experiments::ExperimentConfig cfg;
  cfg.arch = cnn::ArchId::kCA03;
  cfg.train.optimizer = cnn::Optimizer::kSgd;
  cfg.train.epochs = 15;
  cfg.folds = 1;
  cfg.seed = 2026;
  const auto r = experiments::run_experiment(data, features::FeatureSet::handcrafted(), cfg);
  const auto& rep = r.folds.front();
  const double lt = rep.of(Dialect::kLT).f1, ct = rep.of(Dialect::kCT).f1;
  return {lt >= 0.95 && ct >= 0.95,
          fmt("held-out F1 LT %.4f CT %.4f (%zu test utterances, %zu/%zu per class in corpus)", lt, ct, rep.total,
              manifest.count(Dialect::kLT), manifest.count(Dialect::kCT))};
}

Outcome ablation() {
  ScratchDir dir("ife");
  corpus::SynthSpec spec;
  spec.num_utterances = 60;
  spec.min_duration_s = 1.0;
  spec.max_duration_s = 2.5;
  spec.output_dir = dir.path();
  const auto manifest = corpus::synth_corpus(spec, 77);
  const auto informative = features::FeatureId::kSpectralFlux;
  // The second channel is overwritten with Gaussian noise; it only borrows
  // the ZCR id so that it can travel through the feature-set machinery.
  const auto noise_id = features::FeatureId::kZcr;
  const auto base = experiments::extract_dataset(manifest, features::FeatureSet{informative, noise_id});
  experiments::ExperimentConfig cfg;
  cfg.arch = cnn::ArchId::kCA03;
  cfg.train.optimizer = cnn::Optimizer::kSgd;
  cfg.train.epochs = 6;
  cfg.folds = 1;
  cfg.test_fraction = 0.3;
  int wins = 0;
  std::vector<std::string> diverged;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    auto data = base;
    Rng rng(derive_seed(900, rep));
    for (auto& d : data) {
      for (auto& v : d.matrix.values.row(*d.matrix.channel_index(noise_id))) v = rng.normal();
    }
    cfg.seed = rep;
    try {
      const auto t = experiments::ife(data, features::FeatureSet{informative, noise_id}, cfg);
      wins += t.rank_of(features::to_string(informative)) == 1 && t.rank_of(features::to_string(noise_id)) == 2;
    } catch (const Diverged&) {
      diverged.push_back(std::to_string(rep));
    }
  }

  const std::vector<std::pair<std::string, double>> elimination{
      {"F0", 0.9907},     {"VPROB", 0.9913},  {"ENERGY", 0.9908}, {"ZCR", 0.9916}, {"HNR", 0.9901},
      {"DJITTER", 0.9896}, {"JITTER", 0.9909}, {"SHIMMER", 0.9908}, {"SFLUX", 0.9906}, {"SHARP", 0.9916}};
  const std::map<std::string, int> want{{"F0", 4},     {"VPROB", 8},   {"ENERGY", 5}, {"ZCR", 9},   {"HNR", 2},
                                        {"DJITTER", 1}, {"JITTER", 7}, {"SHIMMER", 5}, {"SFLUX", 3}, {"SHARP", 9}};
  const auto table = experiments::rank_by_accuracy(elimination, experiments::RankOrder::kAscending);
  bool ties = true;
  for (const auto& [f, r] : want) ties = ties && table.rank_of(f) == r;
  std::string div = "none";
  if (!diverged.empty()) {
    div.clear();
    for (const auto& r : diverged) div += (div.empty() ? "" : ",") + r;
  }
  return {wins >= 19 && ties,
          fmt("informative channel strictly first in %d/20 repetitions; diverged repetitions: %s; shared-rank pattern %s",
              wins, div.c_str(), ties ? "reproduced" : "WRONG")};
}

Outcome metrics() {
  Rng rng(8);
  std::size_t mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    experiments::Confusion c{};
    for (auto& row : c) {
      for (auto& v : row) v = 1 + rng.below(1000);
    }
    const auto r = experiments::EvalReport::from_confusion(c);
    auto ratio = [](std::size_t a, std::size_t b) { return static_cast<double>(a) / static_cast<double>(b); };
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t o = 1 - k, tp = c[k][k], fn = c[k][o], fp = c[o][k];
      const auto& m = r.per_class[k];
      mismatches += m.precision != ratio(tp, tp + fp);
      mismatches += m.recall != ratio(tp, tp + fn);
      mismatches += m.f1 != ratio(2 * tp, 2 * tp + fp + fn);
    }
    mismatches += r.accuracy != ratio(c[0][0] + c[1][1], c[0][0] + c[0][1] + c[1][0] + c[1][1]);
  }
  const double f1 = experiments::f1_score(0.9824, 0.9815);
  return {mismatches == 0 && std::abs(f1 - 0.9819) <= 5e-4,
          fmt("%zu mismatches over 100 confusion matrices; F1 from P 0.9824 R 0.9815 = %.5f", mismatches, f1)};
}

// Synthesis, extraction, training and evaluation written to `dir`.
std::pair<std::string, std::string> pipeline(const fs::path& dir, std::size_t jobs) {
  corpus::SynthSpec spec;
  spec.num_utterances = 40;
  spec.max_duration_s = 2.5;
  spec.output_dir = dir / "corpus";
  const auto manifest = corpus::synth_corpus(spec, 31);
  const auto set = features::FeatureSet::handcrafted();
  const auto data = experiments::extract_dataset(manifest, set, {}, jobs);
  experiments::ExperimentConfig cfg;
  cfg.train.epochs = 3;
  cfg.folds = 1;
  cfg.seed = 31;
  cfg.jobs = jobs;
  const auto split = experiments::make_splits(experiments::labels_of(data), cfg).front();
  const auto sys = experiments::train_system(data, split.train, cfg, derive_seed(cfg.seed, 100));
  experiments::RunResult res;
  res.config = experiments::to_json(cfg);
  res.featureset = set;
  res.run_id = experiments::make_run_id(res.config, set);
  res.folds = {experiments::evaluate(sys, data, split.test)};
  res.mean_accuracy = res.folds.front().accuracy;
  cnn::save(sys.model, dir / "model.lct");
  experiments::write_results(res, dir / "results.json");
  return {io::read_file(dir / "model.lct"), io::read_file(dir / "results.json")};
}

Outcome determinism() {
  ScratchDir a("det_a"), b("det_b");
  const auto [model_a, results_a] = pipeline(a.path(), 1);
  const auto [model_b, results_b] = pipeline(b.path(), 2);
  const bool same_model = model_a == model_b, same_results = results_a == results_b;
  return {same_model && same_results, fmt("model %zu bytes %s; results %zu bytes %s", model_a.size(),
                                          same_model ? "identical" : "DIFFER", results_a.size(),
                                          same_results ? "identical" : "DIFFER")};
}

}  // namespace

// Optional arguments select criteria by number; all run by default.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"architecture: CA02 weight counts and shape chain", architecture},
      {"gradients: backprop matches finite differences", gradients},
      {"feature oracles: direct formulas and period arithmetic", feature_oracles},
      {"pitch: SHS sweep 80-400 Hz incl. missing fundamental", pitch_accuracy},
      {"segmentation: count, padding, round trip, quartile", segmentation},
      {"end to end: synthetic corpus, CA03, handcrafted F1 >= 0.95", end_to_end},
      {"ablation: IFE informative vs noise, shared ranks", ablation},
      {"metrics: confusion identities and F1 from P/R", metrics},
      {"determinism: identical seeds give identical artifacts", determinism},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(i + 1)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s  %zu  %s  [%s] (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", ran - static_cast<std::size_t>(failed), ran);
  return failed == 0 ? 0 : 1;
}
