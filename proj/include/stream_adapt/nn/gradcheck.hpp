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

// Finite-difference gradient checking of a network's backward pass.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stream_adapt/nn/network.hpp"

namespace stream_adapt::nn {

// Train-mode context recipe. Every evaluation of a check rebuilds the
// context from it, so dropout masks and averaging history repeat exactly.
struct CheckContext {
  std::vector<Segment> segments;
  LhucBinding* lhuc = nullptr;
  std::vector<AverageHistory> history;
  std::uint64_t seed = 5;
};

// Loss = sum_h <probe_h, head_h> + sum_t <probe_t, tap_t>; linear, so the
// analytic gradient with respect to every output is exactly the probe.
struct Probe {
  std::map<std::string, Matrix> heads;
  std::map<std::string, Matrix> taps;
};

double probe_loss(Network& net, const Matrix& x, const Probe& probe, const CheckContext& cc,
                  bool record, OutputGradients* grads, Matrix* dx);

// Fourth-order central differences (step 1e-4) over every parameter entry,
// every input entry and, when given, every LHUC parameter. Returns the worst
// relative error |a - n| / max(|a|, |n|, 1e-6); gradients below the floor
// are at round-off level for unit-scale losses.
double gradient_check(Network& net, Matrix x, const Probe& probe, const CheckContext& cc,
                      Matrix* lhuc_params = nullptr, Matrix* lhuc_grad = nullptr);

// Gaussian matrix from a fixed seed.
Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0);

}  // namespace stream_adapt::nn
