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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "lctid/experiments.hpp"
#include "lctid/random.hpp"

namespace lctid {
namespace {

using experiments::Confusion;
using experiments::EvalReport;
using experiments::RankOrder;
using features::FeatureId;
using features::FeatureSet;

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, HandConfusion) {
  // 10 LT and 10 CT utterances, one error in each class.
  const Confusion c{{{9, 1}, {1, 9}}};
  const auto r = EvalReport::from_confusion(c);
  EXPECT_EQ(r.total, 20u);
  EXPECT_EQ(r.correct, 18u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.9);
  for (auto d : {Dialect::kLT, Dialect::kCT}) {
    EXPECT_EQ(r.of(d).tp, 9u);
    EXPECT_EQ(r.of(d).fp, 1u);
    EXPECT_EQ(r.of(d).fn, 1u);
    EXPECT_EQ(r.of(d).tn, 9u);
    EXPECT_DOUBLE_EQ(r.of(d).precision, 0.9);
    EXPECT_DOUBLE_EQ(r.of(d).recall, 0.9);
    EXPECT_DOUBLE_EQ(r.of(d).f1, 0.9);
  }
}

TEST(Metrics, AsymmetricConfusion) {
  // LT: tp 8, fn 2; CT: tp 5, fn 5 (predicted LT).
  const auto r = EvalReport::from_confusion(Confusion{{{8, 2}, {5, 5}}});
  EXPECT_DOUBLE_EQ(r.of(Dialect::kLT).precision, 8.0 / 13.0);
  EXPECT_DOUBLE_EQ(r.of(Dialect::kLT).recall, 0.8);
  EXPECT_DOUBLE_EQ(r.of(Dialect::kLT).f1, 16.0 / 23.0);
  EXPECT_DOUBLE_EQ(r.of(Dialect::kCT).precision, 5.0 / 7.0);
  EXPECT_DOUBLE_EQ(r.of(Dialect::kCT).recall, 0.5);
  EXPECT_DOUBLE_EQ(r.of(Dialect::kCT).f1, 10.0 / 17.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 13.0 / 20.0);
}

TEST(Metrics, PerfectAndDegenerate) {
  const std::vector<Dialect> truth{Dialect::kLT, Dialect::kCT, Dialect::kCT};
  const auto perfect = EvalReport::from_decisions(truth, truth);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.of(Dialect::kLT).f1, 1.0);
  EXPECT_EQ(perfect.of(Dialect::kCT).f1, 1.0);
  const std::vector<Dialect> all_lt(3, Dialect::kLT);
  const auto r = EvalReport::from_decisions(truth, all_lt);
  EXPECT_EQ(r.of(Dialect::kCT).precision, 0.0);
  EXPECT_EQ(r.of(Dialect::kCT).f1, 0.0);
  EXPECT_THROW(EvalReport::from_decisions(truth, std::vector<Dialect>(2, Dialect::kLT)), ShapeMismatch);
}

TEST(Metrics, PublishedPrecisionRecallGiveF1) {
  EXPECT_NEAR(experiments::f1_score(0.9824, 0.9815), 0.9819, 5e-4);
}

TEST(Metrics, RandomConfusionsMatchRationalOracle) {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    Confusion c{};
    for (auto& row : c) {
      for (auto& v : row) v = rng.below(500);
    }
    const auto r = EvalReport::from_confusion(c);
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t o = 1 - k;
      const std::size_t tp = c[k][k], fn = c[k][o], fp = c[o][k];
      const auto& m = r.per_class[k];
      if (tp + fp > 0) {
        EXPECT_EQ(m.precision, static_cast<double>(tp) / static_cast<double>(tp + fp));
      }
      if (tp + fn > 0) {
        EXPECT_EQ(m.recall, static_cast<double>(tp) / static_cast<double>(tp + fn));
      }
      // F1 as the ratio 2tp / (2tp + fp + fn).
      const std::size_t num = 2 * tp, den = 2 * tp + fp + fn;
      if (den > 0) {
        EXPECT_NEAR(static_cast<long double>(m.f1) * den, static_cast<long double>(num), 1e-9L);
        if (m.precision + m.recall > 0) {
          EXPECT_NEAR(m.f1, experiments::f1_score(m.precision, m.recall), 1e-15);
        }
      }
    }
    const auto sum = c[0][0] + c[0][1] + c[1][0] + c[1][1];
    if (sum > 0) {
      EXPECT_EQ(r.accuracy, static_cast<double>(c[0][0] + c[1][1]) / static_cast<double>(sum));
    }
  }
}

TEST(Metrics, PoolingSumsCounts) {
  const std::vector<EvalReport> parts{EvalReport::from_confusion(Confusion{{{3, 1}, {0, 4}}}),
                                      EvalReport::from_confusion(Confusion{{{5, 0}, {2, 3}}})};
  const auto p = EvalReport::pooled(parts);
  EXPECT_EQ(p.confusion, (Confusion{{{8, 1}, {2, 7}}}));
  EXPECT_DOUBLE_EQ(p.accuracy, 15.0 / 18.0);
}

TEST(Metrics, JsonFields) {
  const auto j = experiments::to_json(EvalReport::from_confusion(Confusion{{{9, 1}, {1, 9}}}));
  EXPECT_DOUBLE_EQ(j.at("accuracy").get<double>(), 0.9);
  EXPECT_TRUE(j.contains("LT"));
  EXPECT_TRUE(j.contains("CT"));
}

// ---------------------------------------------------------------------------
// Splits

std::vector<Dialect> balanced_labels(std::size_t per_class) {
  std::vector<Dialect> l;
  for (std::size_t i = 0; i < per_class; ++i) {
    l.push_back(Dialect::kLT);
    l.push_back(Dialect::kCT);
  }
  return l;
}

TEST(Splits, StratifiedKFold) {
  const auto labels = balanced_labels(100);
  const auto folds = experiments::kfold_indices(labels, 4, 3);
  ASSERT_EQ(folds.size(), 4u);
  std::vector<int> seen(labels.size(), 0);
  for (const auto& f : folds) {
    std::array<int, 2> per{};
    for (auto i : f.test) {
      ++per[index_of(labels[i])];
      ++seen[i];
    }
    EXPECT_EQ(per[0], 25);
    EXPECT_EQ(per[1], 25);
    EXPECT_EQ(f.train.size() + f.test.size(), labels.size());
    std::vector<std::size_t> both;
    std::set_intersection(f.train.begin(), f.train.end(), f.test.begin(), f.test.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty());
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
}

TEST(Splits, SeededAndSeedSensitive) {
  const auto labels = balanced_labels(40);
  const auto a = experiments::kfold_indices(labels, 4, 7);
  const auto b = experiments::kfold_indices(labels, 4, 7);
  const auto c = experiments::kfold_indices(labels, 4, 8);
  for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(a[f].test, b[f].test);
  bool differs = false;
  for (std::size_t f = 0; f < 4; ++f) differs |= a[f].test != c[f].test;
  EXPECT_TRUE(differs);
}

TEST(Splits, Errors) {
  EXPECT_THROW(experiments::kfold_indices(balanced_labels(10), 1, 0), InvalidInput);
  EXPECT_THROW(experiments::kfold_indices(balanced_labels(3), 4, 0), InvalidInput);
  EXPECT_THROW(experiments::holdout_indices(balanced_labels(1), 0.2, 0), InvalidInput);
  EXPECT_THROW(experiments::holdout_indices(balanced_labels(10), 1.0, 0), InvalidInput);
}

TEST(Splits, Holdout) {
  const auto s = experiments::holdout_indices(balanced_labels(50), 0.2, 1);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
}

// ---------------------------------------------------------------------------
// Ranking

using Table = std::vector<std::pair<std::string, double>>;

const Table kEliminationAccuracies{{"F0", 0.9907},     {"VPROB", 0.9913},   {"ENERGY", 0.9908}, {"ZCR", 0.9916},
                                   {"HNR", 0.9901},    {"DJITTER", 0.9896}, {"JITTER", 0.9909}, {"SHIMMER", 0.9908},
                                   {"SFLUX", 0.9906},  {"SHARP", 0.9916}};
const Table kIndependentAccuracies{{"F0", 0.9906},     {"VPROB", 0.9888},   {"ENERGY", 0.9922}, {"ZCR", 0.9582},
                                   {"HNR", 0.9916},    {"DJITTER", 0.9837}, {"JITTER", 0.9777}, {"SHIMMER", 0.9801},
                                   {"SFLUX", 0.9825},  {"SHARP", 0.9310}};

TEST(Ranking, EliminationTable) {
  const auto t = experiments::rank_by_accuracy(kEliminationAccuracies, RankOrder::kAscending);
  const std::map<std::string, int> expected{{"F0", 4},     {"VPROB", 8},   {"ENERGY", 5}, {"ZCR", 9},
                                            {"HNR", 2},    {"DJITTER", 1}, {"JITTER", 7}, {"SHIMMER", 5},
                                            {"SFLUX", 3},  {"SHARP", 9}};
  for (const auto& [f, r] : expected) EXPECT_EQ(t.rank_of(f), r) << f;
  EXPECT_NEAR(t.gaps.min * 100, 0.01, 1e-9);
  EXPECT_NEAR(t.gaps.max * 100, 0.05, 1e-9);
  EXPECT_NEAR(t.gaps.mean * 100, 0.03, 0.005);
  EXPECT_EQ(t.gaps.count, 7u);
}

TEST(Ranking, IndependentTable) {
  const auto t = experiments::rank_by_accuracy(kIndependentAccuracies, RankOrder::kDescending);
  const std::map<std::string, int> expected{{"F0", 3},     {"VPROB", 4},   {"ENERGY", 1}, {"ZCR", 9},
                                            {"HNR", 2},    {"DJITTER", 5}, {"JITTER", 8}, {"SHIMMER", 7},
                                            {"SFLUX", 6},  {"SHARP", 10}};
  for (const auto& [f, r] : expected) EXPECT_EQ(t.rank_of(f), r) << f;
  EXPECT_NEAR(t.gaps.min * 100, 0.06, 1e-9);
  EXPECT_NEAR(t.gaps.max * 100, 2.72, 1e-9);
  EXPECT_NEAR(t.gaps.mean * 100, 0.68, 1e-9);
}

TEST(Ranking, TiesShareRankAndSkip) {
  const Table acc{{"A", 0.90}, {"B", 0.95}, {"C", 0.90}, {"D", 0.80}};
  const auto t = experiments::rank_by_accuracy(acc, RankOrder::kDescending);
  EXPECT_EQ(t.rank_of("B"), 1);
  EXPECT_EQ(t.rank_of("A"), 2);
  EXPECT_EQ(t.rank_of("C"), 2);
  EXPECT_EQ(t.rank_of("D"), 4);
  EXPECT_EQ(t.to_csv(), "feature,accuracy,rank\nA,0.9,2\nB,0.95,1\nC,0.9,2\nD,0.8,4\n");
  EXPECT_THROW(t.rank_of("E"), InvalidInput);
}

TEST(Ranking, PermutationInvariant) {
  const auto base = experiments::rank_by_accuracy(kIndependentAccuracies, RankOrder::kDescending);
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    auto shuffled = kIndependentAccuracies;
    rng.shuffle(shuffled.begin(), shuffled.end());
    const auto p = experiments::rank_by_accuracy(shuffled, RankOrder::kDescending);
    for (const auto& [f, a] : kIndependentAccuracies) EXPECT_EQ(p.rank_of(f), base.rank_of(f));
    EXPECT_EQ(p.gaps.mean, base.gaps.mean);
  }
}

TEST(Ranking, RejectsNonFinite) {
  const Table acc{{"A", std::nan("")}};
  EXPECT_THROW(experiments::rank_by_accuracy(acc, RankOrder::kAscending), InvalidInput);
}

// ---------------------------------------------------------------------------
// Parallel execution

TEST(ParallelFor, CoversEveryIndexOnce) {
  for (std::size_t jobs : {1u, 3u}) {
    std::vector<int> hits(100, 0);
    experiments::parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
}

TEST(ParallelFor, RethrowsLowestFailure) {
  for (std::size_t jobs : {1u, 4u}) {
    try {
      experiments::parallel_for(20, jobs, [](std::size_t i) {
        if (i == 7 || i == 13) throw std::runtime_error("fail " + std::to_string(i));
      });
      FAIL() << "no exception";
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "fail 7");
    }
  }
}

// ---------------------------------------------------------------------------
// Experiments on synthetic feature matrices

// Utterances with all 23 channels; F0 carries a class-dependent offset, the
// rest is noise.
experiments::Dataset toy_dataset(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  experiments::Dataset data;
  const auto all = FeatureSet::parse("handcrafted,mfcc");
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const auto label = i % 2 ? Dialect::kCT : Dialect::kLT;
    features::FeatureMatrix m;
    m.channel_ids = all.ids();
    m.source_id = "u" + std::to_string(i);
    m.values = Matrix<double>(all.size(), 40 + rng.below(40));
    for (auto& v : m.values.storage()) v = rng.normal();
    for (auto& v : m.values.row(0)) v += label == Dialect::kCT ? 1.5 : -1.5;
    data.push_back({m.source_id, label, std::move(m)});
  }
  return data;
}

experiments::ExperimentConfig quick_config() {
  experiments::ExperimentConfig cfg;
  cfg.arch = cnn::ArchId::kCA02;
  cfg.train.optimizer = cnn::Optimizer::kSgd;
  cfg.train.epochs = 4;
  cfg.train.learning_rate = 0.01;
  cfg.folds = 1;
  cfg.test_fraction = 0.25;
  cfg.early_stop_fraction = 0.0;
  cfg.segment_seconds = 0.3;
  cfg.seed = 3;
  return cfg;
}

TEST(Experiment, LearnsSeparableChannel) {
  const auto data = toy_dataset(12, 1);
  const auto r = experiments::run_experiment(data, FeatureSet{FeatureId::kF0, FeatureId::kHnr}, quick_config());
  ASSERT_EQ(r.folds.size(), 1u);
  EXPECT_EQ(r.folds[0].total, 6u);
  EXPECT_GE(r.mean_accuracy, 5.0 / 6.0);
  EXPECT_EQ(r.run_id.size(), 16u);
}

TEST(Experiment, JobsDoNotChangeResults) {
  const auto data = toy_dataset(8, 2);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  cfg.folds = 2;
  const std::vector<FeatureSet> sets{FeatureSet{FeatureId::kF0}, FeatureSet{FeatureId::kZcr}};
  const auto a = experiments::run_many(data, sets, cfg);
  cfg.jobs = 3;
  const auto b = experiments::run_many(data, sets, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(experiments::to_json(a[i]), experiments::to_json(b[i]));
}

TEST(Experiment, EliminationRoundEvaluatesEachFeatureOnce) {
  const auto data = toy_dataset(6, 3);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  const auto set = FeatureSet::parse("F0,ENERGY,HNR");
  const auto t = experiments::rfe_round(data, set, cfg);
  EXPECT_EQ(t.evaluations, set.size());
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].feature, "F0");
  EXPECT_EQ(t.runs[0].featureset.to_string(), "ENERGY,HNR");
  EXPECT_THROW(experiments::rfe_round(data, FeatureSet{FeatureId::kF0}, cfg), InvalidInput);
}

TEST(Experiment, IndependentEvaluationUsesSingleChannels) {
  const auto data = toy_dataset(6, 4);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  const auto t = experiments::ife(data, FeatureSet::parse("F0,ZCR"), cfg);
  EXPECT_EQ(t.evaluations, 2u);
  EXPECT_EQ(t.runs[1].featureset.size(), 1u);
  EXPECT_THROW(experiments::ife(data, FeatureSet{}, cfg), InvalidInput);
}

TEST(Experiment, CombineAddsChannels) {
  const auto mfcc = FeatureSet::mfcc();
  EXPECT_EQ(experiments::combine(mfcc, FeatureSet::parse("SFLUX,JITTER,DJITTER")).size(), 16u);
  EXPECT_EQ(experiments::combine(mfcc, FeatureSet::handcrafted()).size(), 23u);
  EXPECT_THROW(experiments::combine(mfcc, FeatureSet::parse("MFCC_2,F0")), InvalidInput);
  const auto data = toy_dataset(6, 5);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  const auto r = experiments::combine_and_eval(data, mfcc, FeatureSet::parse("SFLUX,JITTER,DJITTER"), cfg);
  EXPECT_EQ(r.featureset.size(), 16u);
}

TEST(Experiment, EvaluateRejectsMismatchedChannels) {
  const auto data = toy_dataset(6, 6);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  const auto sel = experiments::select(data, FeatureSet::parse("F0,HNR"));
  std::vector<std::size_t> idx(sel.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto sys = experiments::train_system(sel, idx, cfg, 1);
  EXPECT_EQ(sys.segment_frames, 30u);
  EXPECT_NO_THROW(experiments::evaluate(sys, sel));
  EXPECT_THROW(experiments::evaluate(sys, experiments::select(data, FeatureSet::parse("F0,ZCR"))), ShapeMismatch);
  EXPECT_THROW(experiments::evaluate(sys, experiments::select(data, FeatureSet::parse("F0,HNR,ZCR"))),
               ShapeMismatch);
}

TEST(Experiment, DefaultSegmentIsFirstQuartile) {
  const auto data = toy_dataset(6, 7);
  auto cfg = quick_config();
  cfg.train.epochs = 1;
  cfg.segment_seconds.reset();
  const auto sel = experiments::select(data, FeatureSet{FeatureId::kF0});
  std::vector<std::size_t> idx(sel.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> durations;
  for (const auto& d : sel) durations.push_back(static_cast<double>(d.matrix.num_frames()) / 100.0);
  const auto sys = experiments::train_system(sel, idx, cfg, 1);
  EXPECT_EQ(sys.segment_frames, segmenter::frames_for_duration(segmenter::first_quartile(durations)));
}

TEST(Experiment, ConfigJsonOmitsJobs) {
  experiments::ExperimentConfig cfg;
  cfg.jobs = 8;
  const auto j = experiments::to_json(cfg);
  EXPECT_FALSE(j.contains("jobs"));
  cfg.jobs = 1;
  EXPECT_EQ(experiments::to_json(cfg), j);
  EXPECT_EQ(experiments::make_run_id(j, FeatureSet::handcrafted()),
            experiments::make_run_id(j, FeatureSet::handcrafted()));
  EXPECT_NE(experiments::make_run_id(j, FeatureSet::handcrafted()), experiments::make_run_id(j, FeatureSet::mfcc()));
}

}  // namespace
}  // namespace lctid
