// Copyright 2026 The stream-adapt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// stream-adapt: command line front end of the cached experiment pipeline.
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stream_adapt/analysis.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/experiment.hpp"
#include "stream_adapt/pipeline.hpp"
#include "stream_adapt/report.hpp"

namespace fs = std::filesystem;
using namespace stream_adapt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string profile = "desk";
  std::optional<double> alpha;
  std::optional<int> target_dim;
  std::optional<std::string> reg_inputs;
  std::optional<std::string> window;
  std::optional<int> d;
  std::vector<std::string> overrides;  // section.key=value
  std::string axis;
  std::vector<std::string> values;
};

ExperimentConfig build_config(const Options& o) {
  const Profile profile = parse_profile(o.profile);
  ExperimentConfig cfg = o.config.empty() ? default_config(profile) : load_config(o.config, profile);
  if (o.seed) set_config_value(cfg, "experiment.seeds", std::to_string(*o.seed));
  if (o.alpha) set_config_value(cfg, "regression.alpha", fmt::format("{:.17g}", *o.alpha));
  if (o.target_dim) set_config_value(cfg, "regression.target_dim", std::to_string(*o.target_dim));
  if (o.reg_inputs) set_config_value(cfg, "regression.inputs", *o.reg_inputs);
  if (o.window) set_config_value(cfg, "experiment.window", *o.window);
  if (o.d) set_config_value(cfg, "experiment.d", std::to_string(*o.d));
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void copy_reports(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  for (const auto& e : fs::directory_iterator(from)) {
    const auto ext = e.path().extension();
    if ((ext != ".csv" && ext != ".svg") || e.path().filename() == "curve.csv") continue;
    fs::copy_file(e.path(), to / e.path().filename(), fs::copy_options::overwrite_existing);
  }
}

void print_stage(const StageRecord& r) {
  fmt::print("{:<16} {} {}\n", r.name, r.cached ? "cached" : "built ", r.dir.string());
}

void write_ablation_plot(const CsvTable& t, const std::string& axis, const fs::path& stem) {
  Plot plot{"Ablation over " + axis, axis + " setting (index)", "frame accuracy", false, true, {}, {}};
  std::vector<std::string> values;
  std::map<std::string, PlotSeries> by_seed;
  for (const auto& r : t.rows()) {
    if (r[4] != "all") continue;
    if (std::find(values.begin(), values.end(), r[1]) == values.end()) values.push_back(r[1]);
    auto& s = by_seed[r[2]];
    s.name = "seed " + r[2];
    s.x.push_back(static_cast<double>(
        std::find(values.begin(), values.end(), r[1]) - values.begin()));
    s.y.push_back(1.0 - std::stod(r[7]));
  }
  std::string list;
  for (std::size_t i = 0; i < values.size(); ++i)
    list += fmt::format("{}{}={}", i ? ", " : "", i, values[i]);
  plot.notes.push_back("settings: " + list);
  for (auto& [seed, s] : by_seed) plot.series.push_back(std::move(s));
  write_plot(plot, stem);
}

int run(const std::string& command, const Options& o) {
  const ExperimentConfig cfg = build_config(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  Experiment exp(cfg, out);

  if (command == "gen-corpus") {
    print_stage(exp.corpus_stage());
    print_stage(exp.bases_stage(SlidingWindowSpec::whole_utterance()));
    print_stage(exp.bases_stage(cfg.window));
    return 0;
  }
  if (command == "ablate") {
    const auto values = o.values.empty() ? default_ablation_values(o.axis) : o.values;
    const CsvTable t = ablate(cfg, out, o.axis, values);
    const fs::path dir = out / "reports";
    fs::create_directories(dir);
    t.write(dir / ("ablate_" + o.axis + ".csv"));
    write_ablation_plot(t, o.axis, dir / ("ablate_" + o.axis + "_plot"));
    fmt::print("{}\n", (dir / ("ablate_" + o.axis + ".csv")).string());
    return 0;
  }

  for (auto seed : cfg.seeds) {
    SeedRun& r = exp.seed(seed);
    if (command == "train-sbe") {
      print_stage(r.sbe());
    } else if (command == "train-vrsbe") {
      print_stage(r.vrsbe());
      print_stage(r.vrsbe_window());
    } else if (command == "train-am") {
      for (auto k : {AmKind::kSi, AmKind::kSbe, AmKind::kVrSbe, AmKind::kVrSbeWindow})
        print_stage(r.am(k));
    } else if (command == "train-lhuc") {
      print_stage(r.lhuc_sat());
    } else if (command == "train-flhuc") {
      print_stage(r.regression());
      print_stage(r.flhuc_am());
    } else if (command == "adapt") {
      print_stage(r.adapt());
      print_stage(r.adapt_flhuc());
    } else if (command == "decode") {
      print_stage(r.evaluate());
      copy_reports(r.evaluate().dir, r.report_dir());
    } else if (command == "sweep") {
      print_stage(r.sweep());
      copy_reports(r.sweep().dir, r.report_dir());
    } else if (command == "homogeneity") {
      print_stage(r.homogeneity());
      copy_reports(r.homogeneity().dir, r.report_dir());
    } else if (command == "bench-rtf") {
      bench_rtf(r, r.report_dir());
    } else if (command == "run-all") {
      r.evaluate();
      r.sweep();
      r.homogeneity();
      r.publish();
      bench_rtf(r, r.report_dir());
    }
    fmt::print("reports: {}\n", r.report_dir().string());
  }
  if (command == "run-all") {
    write_summary(out / "reports", cfg.seeds);
    for (const auto& rec : exp.store().history()) print_stage(rec);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming speaker adaptation toolkit on a synthetic corpus"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "run this seed only (overrides experiment.seeds)");
  app.add_option("--out", o.out, "artifact directory")->capture_default_str();
  app.add_option("--profile", o.profile, "width profile")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  app.add_option("--alpha", o.alpha, "online averaging history factor in [0, 1]");
  app.add_option("--target-dim", o.target_dim, "PCA dimension of the f-LHUC targets");
  app.add_option("--reg-inputs", o.reg_inputs, "regression inputs")
      ->check(CLI::IsMember({"fbk", "vrsbe", "both"}));
  app.add_option("--window", o.window, "streaming window in ms, or utt");
  app.add_option("--d", o.d, "spectral bases per feature");
  app.add_option("--set", o.overrides, "override any config key: section.key=value");
  app.add_flag_callback("--quiet", [] { spdlog::set_level(spdlog::level::warn); },
                        "log warnings only");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-corpus", "synthesize the corpus and extract spectral basis features"},
      {"train-am", "train the SI and feature-adapted acoustic models"},
      {"train-sbe", "train the spectral basis embedding network"},
      {"train-vrsbe", "train the variance-regularized embedding networks"},
      {"train-lhuc", "train the LHUC-SAT acoustic model"},
      {"train-flhuc", "train the f-LHUC regression and fine-tune the acoustic model"},
      {"adapt", "estimate test-time adaptation for the held-out speakers"},
      {"decode", "decode the held-out speakers with every system"},
      {"ablate", "one-axis ablation grid"},
      {"bench-rtf", "real-time factor of streaming feature extraction"},
      {"homogeneity", "speaker homogeneity of adaptation features"},
      {"sweep", "accuracy against the amount of adaptation data"},
      {"run-all", "full pipeline, analyses and reports"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "ablate") {
      sub->add_option("--axis", o.axis, "d, window, alpha, target_dim or reg_inputs")->required();
      sub->add_option("--values", o.values, "settings to run (default: the standard grid)")
          ->delimiter(',');
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const StageError& e) {
    spdlog::error("{}", e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    spdlog::error("stage failure: {}", e.what());
    return kExitStage;
  }
}
