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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "stream_adapt/error.hpp"
#include "stream_adapt/experiment.hpp"

namespace sa = stream_adapt;

TEST(ExperimentConfig, DeskDefaults) {
  const auto c = sa::default_config(sa::Profile::kDesk);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.corpus.speakers, 30);
  EXPECT_EQ(c.corpus_seed, 7u);
  EXPECT_EQ(c.d, 2);
  EXPECT_EQ(c.window.label(), "10");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
  EXPECT_EQ(c.am.input_dim, 2 * c.corpus.frame_spec.n_mels);
  EXPECT_EQ(c.am.classes, c.corpus.classes);
  EXPECT_EQ(c.target_dim, c.corpus.speakers - c.corpus.held_out_speakers - 1);
  EXPECT_DOUBLE_EQ(c.regression.alpha, 0.9);
  EXPECT_EQ(c.sweep_percentages, (std::vector<double>{1, 5, 10, 20, 40, 60, 80, 100}));
  EXPECT_EQ(c.rtf_windows.size(), 8u);
  EXPECT_EQ(c.rtf_windows.front().label(), "utt");
  EXPECT_EQ(c.rtf_windows.back().label(), "10");
  EXPECT_FALSE(c.homogeneity_lhuc);
}

TEST(ExperimentConfig, WideProfileWidths) {
  const auto c = sa::default_config(sa::Profile::kPaper);
  EXPECT_EQ(c.am.hidden, 2000);
  EXPECT_EQ(c.regression.splice_width, 500);
  EXPECT_EQ(c.regression.bottleneck, 300);
  EXPECT_EQ(c.regression.feedforward, 500);
  EXPECT_TRUE(c.homogeneity_lhuc);
  EXPECT_EQ(sa::parse_profile("paper"), sa::Profile::kPaper);
  EXPECT_THROW(sa::parse_profile("laptop"), sa::ConfigError);
}

TEST(ExperimentConfig, TextRoundTrip) {
  auto c = sa::parse_config("[experiment]\nd = 3\nwindow = 20\nseeds = 1,2\n"
                            "[regression]\nalpha = 0.5\ninputs = fbk\ntarget_dim = 5\n",
                            sa::Profile::kDesk);
  EXPECT_EQ(c.d, 3);
  EXPECT_EQ(c.window.label(), "20");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_DOUBLE_EQ(c.regression.alpha, 0.5);
  EXPECT_EQ(c.regression.inputs, sa::RegressionInputs::kFbank);
  EXPECT_EQ(c.target_dim, 5);
  const std::string text = c.to_text();
  EXPECT_EQ(sa::parse_config(text, sa::Profile::kDesk).to_text(), text);
}

TEST(ExperimentConfig, DefaultTextRoundTripsForBothProfiles) {
  for (auto p : {sa::Profile::kDesk, sa::Profile::kPaper}) {
    const std::string text = sa::default_config(p).to_text();
    EXPECT_EQ(sa::parse_config(text, p).to_text(), text);
  }
}

TEST(ExperimentConfig, RejectsUnknownKeysAndSections) {
  EXPECT_THROW(sa::parse_config("[experiment]\nbogus = 1\n", sa::Profile::kDesk), sa::ConfigError);
  EXPECT_THROW(sa::parse_config("[nowhere]\nd = 1\n", sa::Profile::kDesk), sa::ConfigError);
  EXPECT_THROW(sa::parse_config("d = 1\n", sa::Profile::kDesk), sa::ConfigError);
}

TEST(ExperimentConfig, RejectsInvalidValues) {
  const std::vector<std::string> bad{
      "[experiment]\nd = 0\n",          "[experiment]\nd = 41\n",
      "[experiment]\nwindow = abc\n",   "[experiment]\nseeds = 7,7\n",
      "[experiment]\nmode = adult\n",   "[regression]\nalpha = 1.5\n",
      "[regression]\ntarget_dim = 24\n", "[regression]\ntarget_dim = 0\n",
      "[regression]\ninputs = mfcc\n",  "[analysis]\nsweep_percentages = 0,50\n",
      "[analysis]\nsweep_percentages = 101\n", "[analysis]\nprobe_speakers = 2\n",
      "[am]\nhidden = x\n",             "[analysis]\nhomogeneity_lhuc = maybe\n",
      "[experiment]\nseeds = -1\n",     "[corpus]\nheld_out_speakers = 30\n"};
  for (const auto& text : bad)
    EXPECT_THROW(sa::parse_config(text, sa::Profile::kDesk), sa::ConfigError) << text;
}

TEST(ExperimentConfig, ModeResetsWeightsBeforeExplicitWeights) {
  const auto elderly = sa::parse_config("[experiment]\nmode = elderly\n", sa::Profile::kDesk);
  const auto d = sa::LossWeights::defaults(sa::SupervisionMode::kElderly);
  EXPECT_DOUBLE_EQ(elderly.weights.mse, d.mse);
  EXPECT_DOUBLE_EQ(elderly.weights.group, d.group);
  // An explicit weight wins regardless of its position in the file.
  const auto c = sa::parse_config("[embedding]\nweight_mse = 0.5\nweight_group = 0.25\n"
                                  "weight_speaker = 0.25\n[experiment]\nmode = elderly\n",
                                  sa::Profile::kDesk);
  EXPECT_EQ(c.mode, sa::SupervisionMode::kElderly);
  EXPECT_EQ(c.embedding.mode, sa::SupervisionMode::kElderly);
  EXPECT_DOUBLE_EQ(c.weights.mse, 0.5);
}

TEST(ExperimentConfig, SetConfigValue) {
  auto c = sa::default_config(sa::Profile::kDesk);
  sa::set_config_value(c, "regression.alpha", "0.3");
  sa::set_config_value(c, "experiment.window", "utt");
  EXPECT_DOUBLE_EQ(c.regression.alpha, 0.3);
  EXPECT_TRUE(c.window.is_whole_utterance());
  EXPECT_THROW(sa::set_config_value(c, "regression.nothing", "1"), sa::ConfigError);
  EXPECT_THROW(sa::set_config_value(c, "regression.alpha", "high"), sa::ConfigError);
}

TEST(ExperimentConfig, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "stream_adapt_cfg_test.ini";
  std::ofstream(path) << "; comment\n[experiment]\nd = 4\n";
  EXPECT_EQ(sa::load_config(path, sa::Profile::kDesk).d, 4);
  std::filesystem::remove(path);
  EXPECT_THROW(sa::load_config(path, sa::Profile::kDesk), sa::ConfigError);
}
