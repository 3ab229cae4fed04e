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

// The lctid command-line tool: synth, extract, plot, train, eval, ablate and
// combine subcommands. Exit codes: 0 success, 1 runtime failure, 2 usage or
// configuration error.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lctid/cnn.hpp"
#include "lctid/corpus.hpp"
#include "lctid/error.hpp"
#include "lctid/experiments.hpp"
#include "lctid/features.hpp"
#include "lctid/io.hpp"
#include "lctid/wav.hpp"

namespace lctid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// A configuration value that failed validation; reported with exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kModelFile = "model.lct";
inline constexpr const char* kNormFile = "norm.json";
inline constexpr const char* kResultsFile = "results.json";
inline constexpr const char* kRunConfigFile = "run_config.toml";

// ---------------------------------------------------------------------------
// Options shared by the experiment subcommands

struct RunOptions {
  std::string manifest;
  std::string features = "handcrafted";
  std::string arch = "CA03";
  std::string optimizer;  // empty: architecture default
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  std::size_t epochs = 20;
  double conv_dropout = 0.25;
  double dense_dropout = 0.5;
  std::size_t patience = 5;
  std::size_t folds = 4;
  double test_fraction = 0.2;
  double early_stop_fraction = 0.1;
  double segment_seconds = 0.0;  // 0: first quartile of training durations
  std::string balanced;          // e.g. "8h"; empty uses the whole manifest
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
  std::string config;
};

inline void add_run_options(CLI::App* cmd, RunOptions& o, std::size_t default_folds) {
  o.folds = default_folds;
  cmd->add_option("--config", o.config, "key = value configuration file (command-line flags take precedence)");
  cmd->add_option("--manifest", o.manifest, "Corpus manifest (id<TAB>path<TAB>dialect)")->required();
  cmd->add_option("--features", o.features, "Feature set: handcrafted, mfcc, or ids joined by ',' or '+'")
      ->capture_default_str();
  cmd->add_option("--arch", o.arch, "Network architecture: CA01, CA02 or CA03")->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer, "minibatch_gd or sgd (default: sgd for CA03, minibatch_gd otherwise)");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size for minibatch_gd")->capture_default_str();
  cmd->add_option("--lr", o.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Maximum training epochs")->capture_default_str();
  cmd->add_option("--conv-dropout", o.conv_dropout, "Dropout after each conv block")->capture_default_str();
  cmd->add_option("--dense-dropout", o.dense_dropout, "Dropout after each hidden dense layer")->capture_default_str();
  cmd->add_option("--patience", o.patience, "Early-stopping patience in epochs")->capture_default_str();
  cmd->add_option("--folds", o.folds, "Cross-validation folds (1 = stratified holdout)")->capture_default_str();
  cmd->add_option("--test-fraction", o.test_fraction, "Holdout test fraction when --folds 1")->capture_default_str();
  cmd->add_option("--early-stop-fraction", o.early_stop_fraction,
                  "Fraction of training utterances used for early stopping (0 disables)")
      ->capture_default_str();
  cmd->add_option("--segment-seconds", o.segment_seconds,
                  "Segment duration in seconds (0: first quartile of training durations)")
      ->capture_default_str();
  cmd->add_option("--balanced", o.balanced, "Balanced per-class subset, e.g. 8h or 0.5h");
  cmd->add_option("--seed", o.seed, "Random seed")->envname("LCTID_SEED")->capture_default_str();
  cmd->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->required();
}

// Appends `--key value` for every entry of the file named by --config whose
// key is not already given on the command line. Keys may sit at the top level
// or in a section named after the subcommand.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find_if(args.begin(), args.end(), [](const std::string& a) {
    return a == "--config" || a.rfind("--config=", 0) == 0;
  });
  if (it == args.end()) return args;
  std::string path;
  if (*it == "--config") {
    if (it + 1 == args.end()) return args;  // reported by the parser
    path = *(it + 1);
  } else {
    path = it->substr(9);
  }
  const std::string sub = args.empty() ? "" : args.front();
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::ParseError& e) {
    throw UsageError("invalid value for config: " + std::string(e.what()));
  }
  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> extra;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--" || item.name == "config") continue;
    if (!item.parents.empty() && item.parents != std::vector<std::string>{sub}) continue;
    const std::string flag = "--" + item.name;
    if (given(flag)) continue;
    extra.push_back(flag);
    extra.insert(extra.end(), item.inputs.begin(), item.inputs.end());
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// Parses "8h", "8", "30m" into hours.
inline double parse_hours(std::string_view s) {
  double scale = 1.0;
  if (!s.empty() && (s.back() == 'h' || s.back() == 'H')) {
    s.remove_suffix(1);
  } else if (!s.empty() && (s.back() == 'm' || s.back() == 'M')) {
    s.remove_suffix(1);
    scale = 1.0 / 60.0;
  }
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !(v > 0.0)) {
    throw UsageError("invalid value for balanced: expected a positive duration such as 8h");
  }
  return v * scale;
}

template <typename F>
auto as_usage(std::string_view field, F&& f) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw UsageError("invalid value for " + std::string(field) + ": " + e.what());
  }
}

inline experiments::ExperimentConfig resolve(const RunOptions& o) {
  experiments::ExperimentConfig c;
  c.arch = as_usage("arch", [&] { return cnn::parse_arch(o.arch); });
  c.train.optimizer = o.optimizer.empty() ? cnn::default_optimizer(c.arch)
                                          : as_usage("optimizer", [&] { return cnn::parse_optimizer(o.optimizer); });
  c.train.batch_size = o.batch_size;
  c.train.learning_rate = o.learning_rate;
  c.train.epochs = o.epochs;
  c.train.conv_dropout = o.conv_dropout;
  c.train.dense_dropout = o.dense_dropout;
  c.train.patience = o.patience;
  c.folds = o.folds;
  c.test_fraction = o.test_fraction;
  c.early_stop_fraction = o.early_stop_fraction;
  if (o.segment_seconds > 0.0) c.segment_seconds = o.segment_seconds;
  c.seed = o.seed;
  c.jobs = o.jobs;
  if (!(o.learning_rate > 0.0)) throw UsageError("invalid value for lr: must be > 0");
  if (o.batch_size == 0) throw UsageError("invalid value for batch-size: must be >= 1");
  if (o.folds == 1 && !(o.test_fraction > 0.0 && o.test_fraction < 1.0)) {
    throw UsageError("invalid value for test-fraction: must lie in (0, 1)");
  }
  if (o.segment_seconds < 0.0) throw UsageError("invalid value for segment-seconds: must be >= 0");
  as_usage("config", [&] {
    c.validate();
    return 0;
  });
  if (!fs::exists(o.manifest)) throw UsageError("invalid value for manifest: " + o.manifest + " does not exist");
  return c;
}

inline features::FeatureSet resolve_features(const std::string& spec) {
  return as_usage("features", [&] { return features::FeatureSet::parse(spec); });
}

inline CorpusManifest load_corpus(const RunOptions& o, const experiments::ExperimentConfig& c) {
  auto m = corpus::load_manifest(o.manifest);
  if (!o.balanced.empty()) m = corpus::derive_balanced_subset(m, parse_hours(o.balanced), derive_seed(c.seed, 7));
  return m;
}

inline void write_run_config(CLI::App* cmd, const fs::path& dir) {
  io::write_file_atomic(dir / kRunConfigFile, cmd->config_to_str(true, false));
}

inline void log(const std::string& msg) { std::cerr << "lctid: " << msg << '\n'; }

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string out;
  std::size_t count = 200;
  double min_duration = 1.0;
  double max_duration = 4.0;
  std::uint64_t seed = 0;
};

inline int cmd_synth(const SynthOptions& o) {
  if (o.count < 2) throw UsageError("invalid value for count: need at least 2 utterances");
  if (!(o.min_duration > 0.0) || !(o.max_duration >= o.min_duration)) {
    throw UsageError("invalid value for min-duration/max-duration: need 0 < min <= max");
  }
  corpus::SynthSpec spec;
  spec.num_utterances = o.count;
  spec.min_duration_s = o.min_duration;
  spec.max_duration_s = o.max_duration;
  spec.output_dir = o.out;
  const auto m = corpus::synth_corpus(spec, o.seed);
  std::cout << "wrote " << m.records.size() << " utterances and " << (fs::path(o.out) / "manifest.tsv").string()
            << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOptions {
  std::string manifest;
  std::string features = "handcrafted";
  std::string out;
  std::size_t jobs = 1;
};

inline int cmd_extract(const ExtractOptions& o) {
  const auto set = resolve_features(o.features);
  if (!fs::exists(o.manifest)) throw UsageError("invalid value for manifest: " + o.manifest + " does not exist");
  const auto m = corpus::load_manifest(o.manifest);
  const fs::path out(o.out);
  std::vector<std::string> errors(m.records.size());
  std::vector<std::size_t> frames(m.records.size(), 0);
  experiments::parallel_for(m.records.size(), std::max<std::size_t>(o.jobs, 1), [&](std::size_t i) {
    const auto& rec = m.records[i];
    try {
      const auto fm = features::extract_matrix(read_wav(rec.audio_path), set, {}, rec.id);
      io::write_file_atomic(out / (rec.id + ".csv"), features::to_csv(fm));
      frames[i] = fm.num_frames();
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::string index = "id\tdialect\tframes\tcsv\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (!errors[i].empty()) {
      log("extract failed for " + m.records[i].id + ": " + errors[i]);
      ++failed;
      continue;
    }
    index += m.records[i].id + "\t" + std::string(to_string(m.records[i].dialect)) + "\t" +
             std::to_string(frames[i]) + "\t" + m.records[i].id + ".csv\n";
  }
  io::write_file_atomic(out / "index.tsv", index);
  std::cout << "extracted " << (m.records.size() - failed) << " of " << m.records.size() << " utterances\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// plot

struct PlotOptions {
  std::string a, b;
  std::string feature;
  std::string out;  // output prefix: <out>.svg and <out>.csv
};

inline std::string axis_label(features::FeatureId id) {
  using features::FeatureId;
  switch (id) {
    case FeatureId::kF0: return "F0 (Hz)";
    case FeatureId::kHnr: return "log-HNR";
    case FeatureId::kZcr: return "ZCR (crossings/s)";
    case FeatureId::kEnergy: return "energy";
    case FeatureId::kVoicingProb: return "voicing probability";
    case FeatureId::kSharpness: return "sharpness (Bark)";
    default: return features::to_string(id);
  }
}

namespace detail {

inline std::string num(double v) {
  std::string s;
  features::append_number(s, std::round(v * 100.0) / 100.0);
  return s;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Two stacked panels sharing the time and value axes.
inline std::string contour_svg(std::span<const double> a, std::span<const double> b, std::string_view name_a,
                               std::string_view name_b, const std::string& y_label, double hop_s) {
  constexpr double kW = 800, kPanelH = 220, kLeft = 80, kRight = 20, kTop = 30, kGap = 60;
  const std::size_t n = std::max(a.size(), b.size());
  const double t_max = std::max(1.0, static_cast<double>(n)) * hop_s;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto s : {a, b}) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double plot_w = kW - kLeft - kRight;
  const double total_h = kTop + 2 * kPanelH + kGap + 50;
  using detail::num;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(total_h) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  auto panel = [&](std::span<const double> v, std::string_view title, double top) {
    svg += "<g class=\"panel\">\n";
    svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(top) + "\" width=\"" + num(plot_w) + "\" height=\"" +
           num(kPanelH) + "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num(kLeft) + "\" y=\"" + num(top - 8) + "\">" + detail::xml_escape(title) + "</text>\n";
    svg += "<text transform=\"translate(20," + num(top + kPanelH / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
           detail::xml_escape(y_label) + "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double val = lo + (hi - lo) * k / 4.0;
      const double y = top + kPanelH - kPanelH * k / 4.0;
      svg += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(val) +
             "</text>\n";
    }
    svg += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = kLeft + plot_w * (static_cast<double>(i) * hop_s) / t_max;
      const double y = top + kPanelH - kPanelH * (v[i] - lo) / (hi - lo);
      if (i) svg += ' ';
      svg += num(x) + "," + num(y);
    }
    svg += "\"/>\n</g>\n";
  };
  panel(a, name_a, kTop);
  panel(b, name_b, kTop + kPanelH + kGap);
  const double axis_y = kTop + 2 * kPanelH + kGap;
  for (int k = 0; k <= 5; ++k) {
    const double t = t_max * k / 5.0;
    svg += "<text x=\"" + num(kLeft + plot_w * k / 5.0) + "\" y=\"" + num(axis_y + 16) + "\" text-anchor=\"middle\">" +
           num(t) + "</text>\n";
  }
  svg += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(axis_y + 36) +
         "\" text-anchor=\"middle\">time (s)</text>\n</svg>\n";
  return svg;
}

inline int cmd_plot(const PlotOptions& o) {
  const auto id = features::parse_feature_id(o.feature);
  if (!id) {
    throw UsageError("invalid value for feature: unknown feature id \"" + o.feature +
                     "\"; valid ids: " + features::valid_feature_ids());
  }
  const features::FeatureSet set{*id};
  const auto ma = features::extract_matrix(read_wav(o.a), set, {}, fs::path(o.a).stem().string());
  const auto mb = features::extract_matrix(read_wav(o.b), set, {}, fs::path(o.b).stem().string());
  const auto va = ma.values.row(0);
  const auto vb = mb.values.row(0);
  const double hop_s = ma.hop_ms / 1000.0;
  io::write_file_atomic(o.out + ".svg", contour_svg(va, vb, ma.source_id, mb.source_id, axis_label(*id), hop_s));
  std::string csv = "time_s," + ma.source_id + "," + mb.source_id + "\n";
  for (std::size_t i = 0; i < std::max(va.size(), vb.size()); ++i) {
    features::append_number(csv, static_cast<double>(i) * hop_s);
    csv += ',';
    if (i < va.size()) features::append_number(csv, va[i]);
    csv += ',';
    if (i < vb.size()) features::append_number(csv, vb[i]);
    csv += '\n';
  }
  io::write_file_atomic(o.out + ".csv", csv);
  std::cout << "wrote " << o.out << ".svg and " << o.out << ".csv\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval

inline void print_report(const experiments::EvalReport& r) {
  for (auto d : {Dialect::kLT, Dialect::kCT}) {
    const auto& m = r.of(d);
    std::printf("%s  P %.4f  R %.4f  F1 %.4f\n", std::string(to_string(d)).c_str(), m.precision, m.recall, m.f1);
  }
  std::printf("accuracy %.4f (%zu/%zu)\n", r.accuracy, r.correct, r.total);
}

inline int cmd_train(CLI::App* cmd, const RunOptions& o) {
  auto cfg = resolve(o);
  cfg.folds = 1;  // one model: stratified holdout
  const auto set = resolve_features(o.features);
  const auto manifest = load_corpus(o, cfg);
  const auto data = experiments::extract_dataset(manifest, set, {}, cfg.jobs);
  const auto split = experiments::make_splits(experiments::labels_of(data), cfg).front();
  const auto sys = experiments::train_system(data, split.train, cfg, derive_seed(cfg.seed, 100));
  experiments::RunResult res;
  res.config = experiments::to_json(cfg);
  res.featureset = set;
  res.run_id = experiments::make_run_id(res.config, set);
  res.folds = {experiments::evaluate(sys, data, split.test)};
  res.mean_accuracy = res.folds.front().accuracy;
  const fs::path out(o.out);
  cnn::save(sys.model, out / kModelFile);
  io::write_file_atomic(out / kNormFile, experiments::to_json(sys).dump(2) + "\n");
  experiments::write_results(res, out / kResultsFile);
  write_run_config(cmd, out);
  print_report(res.folds.front());
  return kExitOk;
}

struct EvalOptions {
  std::string model_dir;
  std::string manifest;
  std::string features;  // optional; must match the model's channels
  std::string out;
  std::size_t jobs = 1;
};

inline experiments::TrainedSystem load_system(const fs::path& dir) {
  experiments::TrainedSystem sys;
  sys.model = cnn::load<float>(dir / kModelFile);
  try {
    experiments::from_json(json::parse(io::read_file(dir / kNormFile)), sys);
  } catch (const json::parse_error& e) {
    throw CorruptFile(std::string("normalization file: ") + e.what());
  }
  return sys;
}

inline int cmd_eval(const EvalOptions& o) {
  if (!fs::exists(o.manifest)) throw UsageError("invalid value for manifest: " + o.manifest + " does not exist");
  const auto sys = load_system(o.model_dir);
  features::FeatureSet set;
  for (auto id : sys.norm.channel_ids) set.add(id);
  if (!o.features.empty()) {
    const auto requested = resolve_features(o.features);
    if (requested != set) {
      throw ShapeMismatch("requested features " + requested.to_string() + " do not match the model's " +
                          set.to_string());
    }
  }
  if (sys.model.input != cnn::Shape{sys.segment_frames, set.size()}) {
    throw ShapeMismatch("model input " + cnn::to_string(sys.model.input) + " does not match " +
                        std::to_string(sys.segment_frames) + " frames x " + std::to_string(set.size()) + " channels");
  }
  const auto manifest = corpus::load_manifest(o.manifest);
  const auto data = experiments::extract_dataset(manifest, set, {}, std::max<std::size_t>(o.jobs, 1));
  const auto report = experiments::evaluate(sys, data);
  print_report(report);
  if (!o.out.empty()) {
    experiments::RunResult res;
    res.config = json{{"model", o.model_dir}};
    res.featureset = set;
    res.run_id = experiments::make_run_id(res.config, set);
    res.folds = {report};
    res.mean_accuracy = report.accuracy;
    experiments::write_results(res, o.out);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate / combine

inline int cmd_ablate(CLI::App* cmd, const RunOptions& o, const std::string& method) {
  const auto cfg = resolve(o);
  const auto set = resolve_features(o.features);
  const auto data = experiments::extract_dataset(load_corpus(o, cfg), set, {}, cfg.jobs);
  const auto table = method == "rfe" ? experiments::rfe_round(data, set, cfg) : experiments::ife(data, set, cfg);
  const fs::path out(o.out);
  io::write_file_atomic(out / "ranking.csv", table.to_csv());
  json runs = json::array();
  for (const auto& r : table.runs) runs.push_back(experiments::to_json(r));
  const json doc{{"method", method},
                 {"evaluations", table.evaluations},
                 {"gaps", {{"min", table.gaps.min}, {"max", table.gaps.max}, {"mean", table.gaps.mean}}},
                 {"runs", runs}};
  io::write_file_atomic(out / kResultsFile, doc.dump(2) + "\n");
  write_run_config(cmd, out);
  std::cout << table.to_csv();
  return kExitOk;
}

inline int cmd_combine(CLI::App* cmd, const RunOptions& o, const std::string& base, const std::string& extra) {
  const auto cfg = resolve(o);
  const auto b = resolve_features(base);
  const auto e = resolve_features(extra);
  const auto merged = as_usage("extra", [&] { return experiments::combine(b, e); });
  const auto data = experiments::extract_dataset(load_corpus(o, cfg), merged, {}, cfg.jobs);
  const auto res = experiments::run_experiment(data, merged, cfg);
  const fs::path out(o.out);
  experiments::write_results(res, out / kResultsFile);
  write_run_config(cmd, out);
  print_report(res.pooled());
  std::printf("mean fold accuracy %.4f over %zu channels\n", res.mean_accuracy, merged.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Literary vs colloquial Tamil dialect identification toolkit", "lctid"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic two-class corpus with a manifest");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--count", synth.count, "Number of utterances (alternating LT/CT)")->capture_default_str();
  c_synth->add_option("--min-duration", synth.min_duration, "Shortest utterance in seconds")->capture_default_str();
  c_synth->add_option("--max-duration", synth.max_duration, "Longest utterance in seconds")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Random seed")->envname("LCTID_SEED")->capture_default_str();

  ExtractOptions extract;
  auto* c_extract = app.add_subcommand("extract", "Write one feature CSV per utterance plus index.tsv");
  c_extract->add_option("--manifest", extract.manifest, "Corpus manifest")->required();
  c_extract->add_option("--features", extract.features, "Feature set")->capture_default_str();
  c_extract->add_option("--out", extract.out, "Output directory")->required();
  c_extract->add_option("--jobs", extract.jobs, "Worker threads")->capture_default_str();

  PlotOptions plot;
  auto* c_plot = app.add_subcommand("plot", "Plot a feature contour for two utterances (SVG + CSV)");
  c_plot->add_option("--a", plot.a, "First WAV file")->required();
  c_plot->add_option("--b", plot.b, "Second WAV file")->required();
  c_plot->add_option("--feature", plot.feature, "Feature id, e.g. F0 or HNR")->required();
  c_plot->add_option("--out", plot.out, "Output prefix (writes <out>.svg and <out>.csv)")->required();

  RunOptions train;
  auto* c_train = app.add_subcommand("train", "Train one model on a stratified holdout split");
  add_run_options(c_train, train, 1);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a trained model on a manifest");
  c_eval->add_option("--model", eval.model_dir, "Directory written by train")->required();
  c_eval->add_option("--manifest", eval.manifest, "Corpus manifest")->required();
  c_eval->add_option("--features", eval.features, "Expected feature set (checked against the model)");
  c_eval->add_option("--out", eval.out, "Results JSON path");
  c_eval->add_option("--jobs", eval.jobs, "Worker threads")->capture_default_str();

  RunOptions ablate;
  std::string method;
  auto* c_ablate = app.add_subcommand("ablate", "Rank features by one RFE round or by IFE");
  c_ablate->add_option("--method", method, "rfe or ife")->required()->check(CLI::IsMember({"rfe", "ife"}));
  add_run_options(c_ablate, ablate, 4);

  RunOptions combine;
  std::string base = "mfcc", extra;
  auto* c_combine = app.add_subcommand("combine", "Train and evaluate on the union of two disjoint feature sets");
  c_combine->add_option("--base", base, "Base feature set")->capture_default_str();
  c_combine->add_option("--extra", extra, "Additional feature set")->required();
  add_run_options(c_combine, combine, 4);

  try {
    std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const UsageError& e) {
    log(e.what());
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_extract) return cmd_extract(extract);
    if (*c_plot) return cmd_plot(plot);
    if (*c_train) return cmd_train(c_train, train);
    if (*c_eval) return cmd_eval(eval);
    if (*c_ablate) return cmd_ablate(c_ablate, ablate, method);
    if (*c_combine) return cmd_combine(c_combine, combine, base, extra);
  } catch (const UsageError& e) {
    log(e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace lctid::cli
