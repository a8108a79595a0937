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

#include "stream_adapt/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "stream_adapt/error.hpp"

namespace stream_adapt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t") - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, int>) out = std::stoi(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(v, &used);
    else out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    if constexpr (std::is_same_v<T, std::uint64_t>)
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt::format("{}", xs[i]);
  return out;
}

struct Field {
  std::string key;  // section.name
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
using Ref = T& (*)(ExperimentConfig&);

template <class T>
Field number(std::string key, Ref<T> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            return fmt::format("{}", ref(const_cast<ExperimentConfig&>(c)));
          },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            ref(c) = parse_number<T>(key, v);
          }};
}

Field boolean(std::string key, Ref<bool> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

Field range(std::string key, Ref<TraitRange> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            const auto& r = ref(const_cast<ExperimentConfig&>(c));
            return fmt::format("{},{}", r.lo, r.hi);
          },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            const auto parts = split_list(v);
            if (parts.size() != 2) throw ConfigError(key + ": expected 'lo,hi'");
            ref(c) = {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1])};
          }};
}

template <class T>
Field list(std::string key, Ref<std::vector<T>> ref) {
  return {key,
          [ref](const ExperimentConfig& c) { return join(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            std::vector<T> out;
            for (const auto& p : split_list(v)) out.push_back(parse_number<T>(key, p));
            ref(c) = std::move(out);
          }};
}

// One table drives parsing, defaults and the canonical text form.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // corpus
    f.push_back(number<std::uint64_t>("corpus.seed", [](ExperimentConfig& c) -> auto& { return c.corpus_seed; }));
    f.push_back(number<int>("corpus.speakers", [](ExperimentConfig& c) -> auto& { return c.corpus.speakers; }));
    f.push_back(number<int>("corpus.utts_per_speaker", [](ExperimentConfig& c) -> auto& { return c.corpus.utts_per_speaker; }));
    f.push_back(number<int>("corpus.classes", [](ExperimentConfig& c) -> auto& { return c.corpus.classes; }));
    f.push_back(number<int>("corpus.groups", [](ExperimentConfig& c) -> auto& { return c.corpus.groups; }));
    f.push_back(number<int>("corpus.held_out_speakers", [](ExperimentConfig& c) -> auto& { return c.corpus.held_out_speakers; }));
    f.push_back(number<double>("corpus.test_fraction", [](ExperimentConfig& c) -> auto& { return c.corpus.test_fraction; }));
    f.push_back(range("corpus.volume_gain", [](ExperimentConfig& c) -> auto& { return c.corpus.volume_gain; }));
    f.push_back(range("corpus.spectral_tilt", [](ExperimentConfig& c) -> auto& { return c.corpus.spectral_tilt; }));
    f.push_back(range("corpus.rate_factor", [](ExperimentConfig& c) -> auto& { return c.corpus.rate_factor; }));
    f.push_back(range("corpus.noise_floor", [](ExperimentConfig& c) -> auto& { return c.corpus.noise_floor; }));
    f.push_back(number<double>("corpus.carrier_level", [](ExperimentConfig& c) -> auto& { return c.corpus.carrier_level; }));
    f.push_back(number<double>("corpus.class_slope", [](ExperimentConfig& c) -> auto& { return c.corpus.class_slope; }));
    // experiment
    f.push_back({"experiment.mode",
                 [](const ExperimentConfig& c) { return std::string(supervision_mode_name(c.mode)); },
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.mode = parse_supervision_mode(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("experiment.mode: ") + e.what());
                   }
                   c.embedding.mode = c.mode;
                   c.weights = LossWeights::defaults(c.mode);
                 }});
    f.push_back(number<int>("experiment.d", [](ExperimentConfig& c) -> auto& { return c.d; }));
    f.push_back({"experiment.window",
                 [](const ExperimentConfig& c) { return c.window.label(); },
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.window = SlidingWindowSpec::parse(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("experiment.window: ") + e.what());
                   }
                 }});
    f.push_back(list<std::uint64_t>("experiment.seeds", [](ExperimentConfig& c) -> auto& { return c.seeds; }));
    // acoustic model
    f.push_back(number<int>("am.blocks", [](ExperimentConfig& c) -> auto& { return c.am.blocks; }));
    f.push_back(number<int>("am.hidden", [](ExperimentConfig& c) -> auto& { return c.am.hidden; }));
    f.push_back(number<int>("am.bottleneck", [](ExperimentConfig& c) -> auto& { return c.am.bottleneck; }));
    f.push_back(list<int>("am.context", [](ExperimentConfig& c) -> auto& { return c.am.context; }));
    f.push_back(number<double>("am.dropout", [](ExperimentConfig& c) -> auto& { return c.am.dropout; }));
    f.push_back(number<int>("am.epochs", [](ExperimentConfig& c) -> auto& { return c.am.train.epochs; }));
    f.push_back(number<int>("am.batch_size", [](ExperimentConfig& c) -> auto& { return c.am.train.batch_size; }));
    f.push_back(number<double>("am.learning_rate", [](ExperimentConfig& c) -> auto& { return c.am.train.learning_rate; }));
    f.push_back(number<double>("am.lr_decay", [](ExperimentConfig& c) -> auto& { return c.am.train.lr_decay; }));
    f.push_back(number<double>("am.momentum", [](ExperimentConfig& c) -> auto& { return c.am.train.momentum; }));
    // embedding
    f.push_back(number<int>("embedding.hidden", [](ExperimentConfig& c) -> auto& { return c.embedding.hidden; }));
    f.push_back(number<double>("embedding.dropout", [](ExperimentConfig& c) -> auto& { return c.embedding.dropout; }));
    f.push_back(number<int>("embedding.epochs", [](ExperimentConfig& c) -> auto& { return c.embedding.train.epochs; }));
    f.push_back(number<int>("embedding.batch_size", [](ExperimentConfig& c) -> auto& { return c.embedding.train.batch_size; }));
    f.push_back(number<double>("embedding.learning_rate", [](ExperimentConfig& c) -> auto& { return c.embedding.train.learning_rate; }));
    f.push_back(number<double>("embedding.lr_decay", [](ExperimentConfig& c) -> auto& { return c.embedding.train.lr_decay; }));
    f.push_back(number<int>("embedding.window_epochs", [](ExperimentConfig& c) -> auto& { return c.window_embedding_epochs; }));
    f.push_back(number<int>("embedding.window_batch_size", [](ExperimentConfig& c) -> auto& { return c.window_embedding_batch; }));
    f.push_back(number<double>("embedding.weight_mse", [](ExperimentConfig& c) -> auto& { return c.weights.mse; }));
    f.push_back(number<double>("embedding.weight_group", [](ExperimentConfig& c) -> auto& { return c.weights.group; }));
    f.push_back(number<double>("embedding.weight_speaker", [](ExperimentConfig& c) -> auto& { return c.weights.speaker; }));
    // LHUC
    f.push_back(number<int>("lhuc.epochs", [](ExperimentConfig& c) -> auto& { return c.lhuc.train.epochs; }));
    f.push_back(number<int>("lhuc.batch_size", [](ExperimentConfig& c) -> auto& { return c.lhuc.train.batch_size; }));
    f.push_back(number<double>("lhuc.learning_rate", [](ExperimentConfig& c) -> auto& { return c.lhuc.train.learning_rate; }));
    f.push_back(number<int>("lhuc.passes", [](ExperimentConfig& c) -> auto& { return c.lhuc.passes; }));
    // f-LHUC regression
    f.push_back({"regression.inputs",
                 [](const ExperimentConfig& c) {
                   return std::string(regression_inputs_name(c.regression.inputs));
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.regression.inputs = parse_regression_inputs(v);
                 }});
    f.push_back(number<int>("regression.splice_width", [](ExperimentConfig& c) -> auto& { return c.regression.splice_width; }));
    f.push_back(number<int>("regression.bottleneck", [](ExperimentConfig& c) -> auto& { return c.regression.bottleneck; }));
    f.push_back(number<int>("regression.feedforward", [](ExperimentConfig& c) -> auto& { return c.regression.feedforward; }));
    f.push_back(number<double>("regression.alpha", [](ExperimentConfig& c) -> auto& { return c.regression.alpha; }));
    f.push_back(number<int>("regression.target_dim", [](ExperimentConfig& c) -> auto& { return c.target_dim; }));
    f.push_back(number<int>("regression.epochs", [](ExperimentConfig& c) -> auto& { return c.regression.train.epochs; }));
    f.push_back(number<int>("regression.batch_size", [](ExperimentConfig& c) -> auto& { return c.regression.train.batch_size; }));
    f.push_back(number<double>("regression.learning_rate", [](ExperimentConfig& c) -> auto& { return c.regression.train.learning_rate; }));
    f.push_back(number<int>("finetune.epochs", [](ExperimentConfig& c) -> auto& { return c.finetune.epochs; }));
    f.push_back(number<int>("finetune.batch_size", [](ExperimentConfig& c) -> auto& { return c.finetune.batch_size; }));
    f.push_back(number<double>("finetune.learning_rate", [](ExperimentConfig& c) -> auto& { return c.finetune.learning_rate; }));
    // analyses
    f.push_back(list<double>("analysis.sweep_percentages", [](ExperimentConfig& c) -> auto& { return c.sweep_percentages; }));
    f.push_back(number<int>("analysis.probe_speakers", [](ExperimentConfig& c) -> auto& { return c.probe_speakers; }));
    f.push_back(boolean("analysis.homogeneity_lhuc", [](ExperimentConfig& c) -> auto& { return c.homogeneity_lhuc; }));
    f.push_back({"analysis.rtf_windows",
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> labels;
                   for (const auto& w : c.rtf_windows) labels.push_back(w.label());
                   return join(labels);
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.rtf_windows.clear();
                   for (const auto& p : split_list(v)) c.rtf_windows.push_back(SlidingWindowSpec::parse(p));
                 }});
    f.push_back(number<int>("analysis.rtf_repetitions", [](ExperimentConfig& c) -> auto& { return c.rtf_repetitions; }));
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const char* profile_name(Profile p) { return p == Profile::kDesk ? "desk" : "paper"; }

Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::kDesk;
  if (s == "paper") return Profile::kPaper;
  throw ConfigError("unknown profile '" + s + "' (desk|paper)");
}

ExperimentConfig default_config(Profile profile) {
  ExperimentConfig c;
  c.profile = profile;
  c.weights = LossWeights::defaults(c.mode);

  c.am.classes = c.corpus.classes;
  c.am.input_dim = 2 * c.corpus.frame_spec.n_mels;
  c.am.context = {-1, 0, 1};
  c.am.train.epochs = 8;
  c.am.train.batch_size = 8;
  c.am.train.learning_rate = 0.02;

  c.embedding.train.epochs = 30;
  c.embedding.train.batch_size = 32;
  c.embedding.train.learning_rate = 0.02;

  c.lhuc = LhucConfig::from_base(c.am.train);

  c.regression.train.epochs = 12;
  c.regression.train.batch_size = 4;
  c.regression.train.learning_rate = 0.01;
  c.finetune = c.am.train;
  c.finetune.epochs = 2;
  c.finetune.learning_rate = 0.005;

  for (const char* w : {"utt", "250", "150", "100", "50", "30", "20", "10"})
    c.rtf_windows.push_back(SlidingWindowSpec::parse(w));

  if (profile == Profile::kDesk) {
    c.am.hidden = 128;
    c.am.bottleneck = 64;
    c.embedding.hidden = 256;
    c.regression.splice_width = 128;
    c.regression.bottleneck = 64;
    c.regression.feedforward = 128;
  } else {
    c.am.hidden = 2000;
    c.am.bottleneck = 256;
    c.embedding.hidden = 2000;
    c.regression.splice_width = 500;
    c.regression.bottleneck = 300;
    c.regression.feedforward = 500;
    c.homogeneity_lhuc = true;
  }
  return c;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
  // Derived settings that follow other keys.
  cfg.am.classes = cfg.corpus.classes;
  cfg.am.input_dim = 2 * cfg.corpus.frame_spec.n_mels;
  cfg.embedding.mode = cfg.mode;
}

ExperimentConfig parse_config(const std::string& text, Profile profile) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg = default_config(profile);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, value.data());
  }
  // The mode resets the loss weights, so it goes first.
  std::stable_partition(entries.begin(), entries.end(),
                        [](const auto& e) { return e.first == "experiment.mode"; });
  for (const auto& [key, value] : entries) set_config_value(cfg, key, value);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, Profile profile) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), profile);
}

std::string ExperimentConfig::to_text() const {
  std::string out = fmt::format("# profile {}\n", profile_name(profile));
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + fmt::format("[{}]\n", s);
      section = s;
    }
    out += fmt::format("{} = {}\n", f.key.substr(dot + 1), f.get(*this));
  }
  return out;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  if (d < 1 || d > corpus.frame_spec.n_mels)
    throw ConfigError(fmt::format("experiment.d must lie in [1, {}]", corpus.frame_spec.n_mels));
  window.validate(corpus.frame_spec);
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("experiment.seeds must be distinct");
  am.validate();
  embedding.train.validate();
  if (embedding.hidden < 1) throw ConfigError("embedding.hidden must be positive");
  if (window_embedding_epochs < 1 || window_embedding_batch < 1)
    throw ConfigError("embedding window schedule must be positive");
  weights.validate();
  lhuc.validate();
  regression.train.validate();
  finetune.validate();
  if (regression.alpha < 0.0 || regression.alpha > 1.0)
    throw ConfigError("regression.alpha must lie in [0, 1]");
  if (regression.splice_width < 1 || regression.bottleneck < 1 || regression.feedforward < 1)
    throw ConfigError("regression widths must be positive");
  const int training_speakers = corpus.speakers - corpus.held_out_speakers;
  if (training_speakers < 2) throw ConfigError("at least two training speakers are needed");
  if (target_dim < 1 || target_dim > training_speakers - 1)
    throw ConfigError(fmt::format("regression.target_dim must lie in [1, {}]",
                                  training_speakers - 1));
  if (sweep_percentages.empty()) throw ConfigError("analysis.sweep_percentages is empty");
  for (double p : sweep_percentages)
    if (!(p > 0.0 && p <= 100.0))
      throw ConfigError(fmt::format("sweep percentage {} outside (0, 100]", p));
  if (probe_speakers < 3 || probe_speakers > corpus.speakers)
    throw ConfigError(fmt::format("analysis.probe_speakers must lie in [3, {}]", corpus.speakers));
  if (rtf_windows.empty()) throw ConfigError("analysis.rtf_windows is empty");
  for (const auto& w : rtf_windows) w.validate(corpus.frame_spec);
  if (rtf_repetitions < 1) throw ConfigError("analysis.rtf_repetitions must be positive");
}

}  // namespace stream_adapt
