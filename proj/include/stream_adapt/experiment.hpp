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

#pragma once

// Experiment configuration: every knob of the end-to-end pipeline, loaded
// from an INI-style file on top of a named profile.
//
//   [experiment]
//   mode = dysarthric          ; or elderly
//   d = 2                      ; spectral bases per feature
//   window = 10                ; streaming window in ms, or utt
//   seeds = 7,8,9
//
// Unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stream_adapt/acoustic_model.hpp"
#include "stream_adapt/corpus.hpp"
#include "stream_adapt/embedding.hpp"
#include "stream_adapt/flhuc.hpp"
#include "stream_adapt/lhuc.hpp"
#include "stream_adapt/spectral_basis.hpp"

namespace stream_adapt {

enum class Profile { kDesk, kPaper };

const char* profile_name(Profile p);
Profile parse_profile(const std::string& s);

struct ExperimentConfig {
  Profile profile = Profile::kDesk;

  CorpusConfig corpus;
  std::uint64_t corpus_seed = 7;

  SupervisionMode mode = SupervisionMode::kDysarthric;
  int d = 2;
  SlidingWindowSpec window = SlidingWindowSpec::of_ms(10);
  std::vector<std::uint64_t> seeds{7, 8, 9};

  AmConfig am;
  EmbeddingConfig embedding;
  // Epochs for the windowed embedding model (many more samples per epoch).
  int window_embedding_epochs = 4;
  int window_embedding_batch = 128;
  LossWeights weights;

  LhucConfig lhuc;
  RegressionConfig regression;
  int target_dim = 23;
  nn::TrainingConfig finetune;

  std::vector<double> sweep_percentages{1, 5, 10, 20, 40, 60, 80, 100};
  int probe_speakers = 10;
  // LHUC estimation at every homogeneity point is expensive; off by default.
  bool homogeneity_lhuc = false;
  std::vector<SlidingWindowSpec> rtf_windows;
  int rtf_repetitions = 5;

  void validate() const;
  // Canonical INI text; equal configs give equal text.
  std::string to_text() const;
};

ExperimentConfig default_config(Profile profile);

// Profile defaults overridden by the file's keys.
ExperimentConfig load_config(const std::filesystem::path& path, Profile profile);
// Same, from INI text.
ExperimentConfig parse_config(const std::string& text, Profile profile);

// Sets one "section.key" to a value, as the config file would.
void set_config_value(ExperimentConfig& cfg, const std::string& dotted_key,
                      const std::string& value);

}  // namespace stream_adapt
