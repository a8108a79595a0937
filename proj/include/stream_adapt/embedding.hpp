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

// Speaker embedding networks over spectral basis features. Phase 2 trains a
// multitask classifier with a 25-dim linear bottleneck (SBE); phase 3 adds a
// regression pull of every bottleneck output toward its speaker's phase-2
// average (VR-SBE).

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stream_adapt/nn/network.hpp"
#include "stream_adapt/nn/trainer.hpp"
#include "stream_adapt/types.hpp"

namespace stream_adapt {

enum class SupervisionMode { kDysarthric, kElderly };

const char* supervision_mode_name(SupervisionMode m);
SupervisionMode parse_supervision_mode(const std::string& s);

inline constexpr int kEmbeddingDim = 25;
inline constexpr const char* kBottleneckTap = "bottleneck";

// Weights of the phase-3 objective: regression, group (or aged) CE, speaker CE.
struct LossWeights {
  double mse = 1.0 / 3;
  double group = 1.0 / 3;
  double speaker = 1.0 / 3;

  static LossWeights defaults(SupervisionMode m);
  void validate() const;
};

// One row per extracted basis feature with labels inherited from the utterance.
struct EmbeddingDataset {
  Matrix inputs;                         // samples x d*C
  std::vector<int> speaker;              // index into speaker_ids
  std::vector<int> group;                // severity group
  std::vector<std::string> speaker_ids;  // class table of the speaker head
  int groups = 0;

  Eigen::Index size() const { return inputs.rows(); }
  void validate(SupervisionMode mode) const;
};

// Binary aged label used by the elderly mode: the upper half of the groups.
int aged_label(int group, int groups);

struct EmbeddingConfig {
  SupervisionMode mode = SupervisionMode::kDysarthric;
  int hidden = 256;
  double dropout = 0.2;
  nn::TrainingConfig train;
};

// Four blocks (three hidden, one 25-dim linear bottleneck), skip from the
// first to the third block, softmax heads on the bottleneck.
nn::NetworkSpec embedding_network_spec(int input_dim, const EmbeddingConfig& cfg, int groups,
                                       int speakers, std::uint64_t seed);

class SbeModel {
 public:
  SbeModel() = default;
  SbeModel(nn::Network net, SupervisionMode mode, bool variance_regularized)
      : net_(std::move(net)), mode_(mode), variance_regularized_(variance_regularized) {}

  // Bottleneck features for each input row; rows are independent.
  Matrix embed(const Matrix& inputs) const;
  Vector embed_one(const Vector& input) const;

  const nn::Network& network() const { return net_; }
  nn::Network& network() { return net_; }
  SupervisionMode mode() const { return mode_; }
  bool variance_regularized() const { return variance_regularized_; }
  int input_dim() const { return net_.input_dim(); }

  void save(const std::filesystem::path& path) const;
  static SbeModel load(const std::filesystem::path& path);

 private:
  nn::Network net_;
  SupervisionMode mode_ = SupervisionMode::kDysarthric;
  bool variance_regularized_ = false;
};

class SpeakerAverageTable {
 public:
  void set(const std::string& speaker_id, Vector v);
  const Vector& at(const std::string& speaker_id) const;
  bool contains(const std::string& speaker_id) const { return rows_.count(speaker_id) > 0; }
  std::size_t size() const { return rows_.size(); }
  const std::map<std::string, Vector>& rows() const { return rows_; }

  // One line per speaker: speaker_id<TAB>v1,...,vE
  void write(const std::filesystem::path& path) const;
  static SpeakerAverageTable read(const std::filesystem::path& path);

  // Means of the rows of `embeddings` grouped by `speaker_ids` (parallel).
  static SpeakerAverageTable from_embeddings(const Matrix& embeddings,
                                             const std::vector<std::string>& speaker_ids);

 private:
  std::map<std::string, Vector> rows_;
};

SpeakerAverageTable average_speaker_embeddings(const SbeModel& model,
                                               const EmbeddingDataset& data);

struct VrSbeLoss {
  double total = 0.0;
  double mse = 0.0;
  double group = 0.0;
  double speaker = 0.0;
};

// Gradients are written for the terms whose pointer is non-null and whose
// weight is non-zero; the others are left empty.
VrSbeLoss vr_sbe_loss(const Matrix& bottleneck, const Matrix& targets,
                      const Matrix* group_log_probs, const std::vector<int>& group_labels,
                      const Matrix* speaker_log_probs, const std::vector<int>& speaker_labels,
                      const LossWeights& w, Matrix* d_bottleneck, Matrix* d_group,
                      Matrix* d_speaker);

SbeModel train_sbe(const EmbeddingDataset& data, const EmbeddingConfig& cfg,
                   std::vector<double>* curve = nullptr);

// With `init`, training continues from that phase-2 network (same
// architecture and input standardization) instead of a fresh one.
SbeModel train_vr_sbe(const EmbeddingDataset& data, const SpeakerAverageTable& table,
                      const LossWeights& weights, const EmbeddingConfig& cfg,
                      std::vector<double>* curve = nullptr, const SbeModel* init = nullptr);

// Trace of the covariance of each speaker's rows (population normalization).
std::map<std::string, double> per_speaker_variance(const Matrix& embeddings,
                                                   const std::vector<std::string>& speaker_ids);

}  // namespace stream_adapt
