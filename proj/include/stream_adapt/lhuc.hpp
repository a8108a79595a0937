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

// Learning hidden unit contributions: per-speaker scaling 2*sigmoid(v) of a
// hidden layer's activations, estimated by gradient descent on a frozen
// model, jointly trained with the model (SAT), or refined over several
// unsupervised decoding passes.

#include <filesystem>
#include <string>
#include <vector>

#include "stream_adapt/acoustic_model.hpp"

namespace stream_adapt {

struct LhucTransform {
  std::string speaker_id;
  int layer = 0;  // adapted block index
  Vector v;       // raw parameters; the applied scale is 2*sigmoid(v)

  Vector scales() const;
  int width() const { return static_cast<int>(v.size()); }

  // Text: "speaker_id layer width" header, then one value per line.
  void write(const std::filesystem::path& path) const;
  static LhucTransform read(const std::filesystem::path& path);
};

LhucTransform identity_transform(const std::string& speaker_id, int layer, int width);

// h * 2*sigmoid(v), element-wise.
Vector apply_lhuc(const Vector& hidden, const LhucTransform& t);

struct LhucConfig {
  nn::TrainingConfig train;  // estimation schedule
  int passes = 2;

  // Ten times the base learning rate, five epochs, one utterance per step.
  static LhucConfig from_base(const nn::TrainingConfig& base);
  void validate() const;
};

// Estimates one transform from `items` (one speaker, labels from
// item.targets()). The model is not modified. `curve` receives the
// full-batch CE before estimation followed by the CE after every epoch.
LhucTransform estimate_lhuc(const AcousticModel& model, const std::vector<AmItem>& items,
                            const LhucConfig& cfg, std::vector<double>* curve = nullptr);

// Mean frame CE of the items under a transform (nullptr = identity).
double lhuc_cross_entropy(const AcousticModel& model, const std::vector<AmItem>& items,
                          const Vector* v);

struct SatResult {
  AcousticModel model;
  std::vector<LhucTransform> transforms;  // one per speaker, in speaker order
  std::vector<double> curve;
};

// Joint training of the model and one transform per speaker. item.transform
// must index `speakers`. With clamp_transforms the transforms stay at zero.
SatResult lhuc_sat_train(const std::vector<AmItem>& items,
                         const std::vector<std::string>& speakers, const AmConfig& cfg,
                         bool clamp_transforms = false);

struct MultipassResult {
  LhucTransform transform;
  std::vector<std::vector<int>> hypotheses;  // final pass, per item
  std::vector<double> label_accuracy;        // pseudo-label accuracy per pass vs gold
};

// Pass 1 decodes with the identity transform; every pass re-estimates the
// transform from zero on the previous pass's hypotheses. With `gold` set,
// the supplied labels replace the first-pass hypotheses.
MultipassResult multipass_adapt(const AcousticModel& model, const std::vector<AmItem>& items,
                                const LhucConfig& cfg,
                                const std::vector<std::vector<int>>* gold = nullptr);

}  // namespace stream_adapt
