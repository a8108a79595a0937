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

// Feature-based LHUC: a regression network maps per-frame acoustic and
// speaker features to PCA coefficients of a speaker's LHUC transform. An
// online cross-utterance averaging layer carries each speaker's history so
// the predicted transform sharpens as more of the speaker is heard.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stream_adapt/acoustic_model.hpp"
#include "stream_adapt/lhuc.hpp"
#include "stream_adapt/nn/network.hpp"
#include "stream_adapt/nn/trainer.hpp"

namespace stream_adapt {

// (sum_t h_t + alpha G) / (T + alpha N), then G <- sum_t h_t + alpha G and
// N <- T + alpha N. An empty utterance leaves the state unchanged and
// returns an empty vector.
struct OnlineAverageState {
  double alpha = 0.9;
  nn::AverageHistory history;

  Vector update(const Matrix& utterance_rows);
  // Weighted mean without advancing the state.
  Vector peek(const Matrix& utterance_rows) const;
};

class PcaProjection {
 public:
  PcaProjection() = default;
  PcaProjection(Vector mean, Matrix basis, Vector eigenvalues)
      : mean_(std::move(mean)), basis_(std::move(basis)), eigenvalues_(std::move(eigenvalues)) {}

  // Centered PCA of the rows of `data` keeping k components. Eigenvalues
  // are population variances (divided by the row count). Each basis column
  // is signed so its largest-magnitude entry is positive.
  static PcaProjection fit(const Matrix& data, int k);

  int k() const { return static_cast<int>(basis_.cols()); }
  int width() const { return static_cast<int>(basis_.rows()); }
  const Vector& mean() const { return mean_; }
  const Matrix& basis() const { return basis_; }  // width x k, orthonormal columns
  // All eigenvalues, not only the retained ones, in nonincreasing order.
  const Vector& eigenvalues() const { return eigenvalues_; }

  Matrix project(const Matrix& rows) const;
  Matrix reconstruct(const Matrix& coefficients) const;

  void write(class CheckpointWriter& w, const std::string& prefix) const;
  static PcaProjection read(const class CheckpointReader& r, const std::string& prefix);

 private:
  Vector mean_;
  Matrix basis_;
  Vector eigenvalues_;
};

struct PcaTargets {
  PcaProjection pca;
  std::map<std::string, Vector> targets;  // speaker -> k coefficients
};

// Rejects k < 1 and k > #speakers - 1.
PcaTargets build_pca_targets(const std::vector<LhucTransform>& transforms, int k);

enum class RegressionInputs { kFbank, kVrSbe, kBoth };
const char* regression_inputs_name(RegressionInputs r);
RegressionInputs parse_regression_inputs(const std::string& s);

struct RegressionConfig {
  RegressionInputs inputs = RegressionInputs::kBoth;
  int splice_width = 500;
  int bottleneck = 300;
  int feedforward = 500;
  double alpha = 0.9;
  nn::TrainingConfig train;
};

nn::NetworkSpec regression_network_spec(int input_dim, int k, const RegressionConfig& cfg,
                                        std::uint64_t seed);

// One utterance of regression input: acoustic frames and the matching
// per-frame speaker features.
struct RegressionItem {
  const FrameData* data = nullptr;
  const Matrix* speaker_features = nullptr;  // T x 25, may be null for fbank-only input
};

class RegressionModel {
 public:
  RegressionModel() = default;
  RegressionModel(nn::Network net, PcaProjection pca, RegressionInputs inputs, double alpha)
      : net_(std::move(net)), pca_(std::move(pca)), inputs_(inputs), alpha_(alpha) {}

  const nn::Network& network() const { return net_; }
  nn::Network& network() { return net_; }
  const PcaProjection& pca() const { return pca_; }
  RegressionInputs inputs() const { return inputs_; }
  double alpha() const { return alpha_; }

  Matrix input_rows(const RegressionItem& item) const;

  void save(const std::filesystem::path& path) const;
  static RegressionModel load(const std::filesystem::path& path);

 private:
  nn::Network net_;
  PcaProjection pca_;
  RegressionInputs inputs_ = RegressionInputs::kBoth;
  double alpha_ = 0.9;
};

// Streams one speaker's utterances through the regression network. Each
// call folds the utterance into the speaker history and returns the
// reconstructed full-width transform.
class FlhucPredictor {
 public:
  FlhucPredictor(const RegressionModel& model, std::string speaker_id);
  LhucTransform push(const RegressionItem& item);
  // k-dim network output of the last push.
  const Vector& coefficients() const { return coefficients_; }
  void reset() { history_.assign(1, {}); }

 private:
  const RegressionModel* model_;
  std::string speaker_id_;
  std::vector<nn::AverageHistory> history_;
  Vector coefficients_;
};

// Items of every training speaker, in utterance order per speaker. Targets
// come from `targets`; a speaker without one is a MissingSpeakerError.
RegressionModel train_regression(const std::vector<RegressionItem>& items,
                                 const PcaTargets& targets, const RegressionConfig& cfg,
                                 std::vector<double>* curve = nullptr);

// Predicted transform per item: each speaker's utterances are streamed in
// the given order with a fresh history per speaker.
std::vector<LhucTransform> predict_flhuc(const RegressionModel& model,
                                         const std::vector<RegressionItem>& items);

// Fine-tunes every AM parameter with the given per-item transforms applied
// at the LHUC site. item.transform indexes `transforms`.
std::vector<double> am_finetune_with_flhuc(AcousticModel& am, const std::vector<AmItem>& items,
                                           const Matrix& transforms,
                                           const nn::TrainingConfig& cfg);

}  // namespace stream_adapt
