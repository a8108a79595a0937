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

// Minibatch SGD with momentum and geometric per-epoch learning-rate decay.
// The caller supplies a step function that runs forward/backward on a batch
// of item indices and returns the batch loss; the trainer owns shuffling,
// gradient zeroing, the parameter update and the NaN guard.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stream_adapt/nn/network.hpp"

namespace stream_adapt::nn {

struct TrainingConfig {
  double learning_rate = 0.05;
  double lr_decay = 0.9;  // multiplied into the rate after every epoch
  int batch_size = 8;
  int epochs = 10;
  double momentum = 0.9;
  bool dropout_active = true;
  std::uint64_t seed = 1;

  void validate() const;
};

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ParamRef> params, double momentum);
  void step(double learning_rate);
  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<Matrix> velocity_;
  double momentum_;
};

struct StepInput {
  const std::vector<std::size_t>& items;
  ForwardContext& ctx;
};

using StepFunction = std::function<double(const StepInput&)>;
// Called after every epoch with the zero-based epoch index.
using EpochHook = std::function<void(int)>;

// Trains over `item_count` items and returns the mean loss of each epoch.
// Throws NumericError (naming `what` and the epoch) on a non-finite loss.
std::vector<double> train(std::vector<ParamRef> params, std::size_t item_count,
                          const TrainingConfig& cfg, const StepFunction& step,
                          const std::string& what = "training", const EpochHook& hook = {});

// Frame classifier on a single input matrix with per-row labels; items are rows.
std::vector<double> train_classifier(Network& net, const Matrix& x,
                                     const std::vector<int>& labels,
                                     const std::string& head, const TrainingConfig& cfg);

}  // namespace stream_adapt::nn
