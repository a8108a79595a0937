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

// Frame classifier hosting every adaptation mode: speaker independent,
// auxiliary speaker features concatenated to the input, and LHUC scaling at
// a hidden layer with per-utterance transforms (estimated or predicted).

#include <filesystem>
#include <string>
#include <vector>

#include "stream_adapt/nn/network.hpp"
#include "stream_adapt/nn/trainer.hpp"
#include "stream_adapt/types.hpp"

namespace stream_adapt {

// One utterance ready for the acoustic model.
struct FrameData {
  std::string utt_id;
  std::string speaker_id;
  int group = 0;
  Matrix features;          // T x 2C
  std::vector<int> labels;  // T gold frame classes
  int frames() const { return static_cast<int>(features.rows()); }
};

// An utterance plus its adaptation inputs.
struct AmItem {
  const FrameData* data = nullptr;
  Matrix aux;             // T x aux_dim, or empty when the model has no aux input
  int transform = -1;     // row of the transform matrix, -1 = identity
  const std::vector<int>* labels = nullptr;  // overrides data->labels (pseudo labels)

  const std::vector<int>& targets() const { return labels ? *labels : data->labels; }
};

struct AmConfig {
  int classes = 10;
  int input_dim = 80;
  int aux_dim = 0;
  int blocks = 6;
  int hidden = 256;
  int bottleneck = 64;
  std::vector<int> context{-2, -1, 0, 1, 2};
  double dropout = 0.2;
  nn::TrainingConfig train;

  void validate() const;
};

nn::NetworkSpec am_network_spec(const AmConfig& cfg, std::uint64_t seed);

class AcousticModel {
 public:
  AcousticModel() = default;
  AcousticModel(nn::Network net, int aux_dim);

  const nn::Network& network() const { return net_; }
  nn::Network& network() { return net_; }
  int aux_dim() const { return aux_dim_; }
  int classes() const;
  // Width of the LHUC-adapted hidden layer.
  int lhuc_width() const { return lhuc_width_; }
  int lhuc_block() const { return lhuc_block_; }

  // T x K frame log-posteriors. `transforms` holds one raw LHUC parameter row
  // per owner; item.transform selects the row.
  Matrix log_posteriors(const AmItem& item, const Matrix* transforms = nullptr) const;

  std::string provenance;  // config hash and upstream checksums

  void save(const std::filesystem::path& path) const;
  static AcousticModel load(const std::filesystem::path& path);

 private:
  nn::Network net_;
  int aux_dim_ = 0;
  int lhuc_width_ = 0;
  int lhuc_block_ = -1;
};

// Stacks the items' frames (and aux columns) and records one segment per
// utterance plus the per-row transform owner.
struct AmBatch {
  Matrix x;
  std::vector<int> labels;
  std::vector<nn::Segment> segments;
  std::vector<int> owners;
};
AmBatch make_am_batch(const std::vector<const AmItem*>& items, int aux_dim);

struct FitOptions {
  bool update_model = true;
  bool update_transforms = false;
  // Train-mode batch statistics and dropout; off for frozen-model estimation.
  bool train_mode = true;
  std::string what = "acoustic model training";
};

// Generic utterance-minibatch training of the model and/or LHUC transforms.
std::vector<double> fit_am(AcousticModel& model, const std::vector<AmItem>& items,
                           const nn::TrainingConfig& cfg, Matrix* transforms,
                           const FitOptions& opt, const nn::EpochHook& hook = {});

AcousticModel train_am(const std::vector<AmItem>& items, const AmConfig& cfg,
                       std::vector<double>* curve = nullptr);

struct DecodeOutput {
  std::string utt_id;
  int group = 0;
  Matrix log_posteriors;      // T x K
  std::vector<int> predicted;
  std::vector<int> gold;
};

DecodeOutput decode_frames(const AcousticModel& model, const AmItem& item,
                           const Matrix* transforms = nullptr);

// Frame-level score fusion w_a logp_a + w_b logp_b, renormalized per frame.
DecodeOutput joint_decode(const DecodeOutput& a, const DecodeOutput& b, double w_a = 11.0,
                          double w_b = 9.0);

struct GroupMetrics {
  int group = -1;  // -1 = overall
  long frames = 0;
  long errors = 0;
  double rate() const { return frames ? static_cast<double>(errors) / frames : 0.0; }
};

struct Metrics {
  GroupMetrics overall;
  std::vector<GroupMetrics> groups;  // indexed by group label
  double accuracy() const { return 1.0 - overall.rate(); }
};

Metrics evaluate(const std::vector<DecodeOutput>& outputs, int groups);
void write_metrics_csv(const std::filesystem::path& path, const Metrics& m);

// `utt_id pred pred ...` per line.
void write_decode_text(const std::filesystem::path& path, const std::vector<DecodeOutput>& outs);

}  // namespace stream_adapt
