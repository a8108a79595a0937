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

#include "stream_adapt/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stream_adapt::nn {

Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double probe_loss(Network& net, const Matrix& x, const Probe& probe, const CheckContext& cc,
                  bool record, OutputGradients* grads, Matrix* dx) {
  std::mt19937_64 rng(cc.seed);
  auto history = cc.history;
  ForwardContext ctx;
  ctx.mode = Mode::kTrain;
  ctx.rng = &rng;
  ctx.segments = cc.segments;
  ctx.lhuc = cc.lhuc;
  ctx.average_states = &history;
  const Outputs out = record ? net.forward(x, ctx) : net.infer(x, ctx);
  double loss = 0.0;
  for (const auto& [name, p] : probe.heads) loss += (p.array() * out.head(name).array()).sum();
  for (const auto& [name, p] : probe.taps) {
    const int b = net.spec().block_index(name);
    loss += (p.array() * out.blocks[b].array()).sum();
  }
  if (grads) {
    grads->heads = probe.heads;
    grads->taps = probe.taps;
    *dx = net.backward(*grads, ctx);
  }
  return loss;
}

double gradient_check(Network& net, Matrix x, const Probe& probe, const CheckContext& cc,
                      Matrix* lhuc_params, Matrix* lhuc_grad) {
  const double h = 1e-4;
  net.zero_grad();
  if (lhuc_grad) lhuc_grad->setZero();
  OutputGradients g;
  Matrix dx;
  probe_loss(net, x, probe, cc, true, &g, &dx);
  double worst = 0.0;
  auto check = [&](Matrix& value, const Matrix& grad) {
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double keep = value.data()[i];
      auto at = [&](double delta) {
        value.data()[i] = keep + delta;
        return probe_loss(net, x, probe, cc, false, nullptr, nullptr);
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      value.data()[i] = keep;
      const double a = grad.data()[i];
      const double scale = std::max({1e-6, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  };
  for (auto& p : net.parameters()) {
    const Matrix grad = *p.grad;
    check(*p.value, grad);
  }
  check(x, dx);
  if (lhuc_params) check(*lhuc_params, *lhuc_grad);
  return worst;
}

}  // namespace stream_adapt::nn
