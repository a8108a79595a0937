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

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stream_adapt/error.hpp"
#include "stream_adapt/nn/trainer.hpp"

namespace stream_adapt::nn {

void TrainingConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

SgdOptimizer::SgdOptimizer(std::vector<ParamRef> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
}

void SgdOptimizer::step(double learning_rate) {
  if (learning_rate == 0.0) return;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] - learning_rate * *params_[i].grad;
    *params_[i].value += velocity_[i];
  }
}

std::vector<double> train(std::vector<ParamRef> params, std::size_t item_count,
                          const TrainingConfig& cfg, const StepFunction& step,
                          const std::string& what, const EpochHook& hook) {
  cfg.validate();
  if (item_count == 0) throw ConfigError(what + ": empty training set");
  SgdOptimizer opt(params, cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(item_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < item_count; start += cfg.batch_size) {
      const std::size_t end = std::min(item_count, start + cfg.batch_size);
      std::vector<std::size_t> items(order.begin() + start, order.begin() + end);
      for (auto& p : opt.params()) p.grad->setZero();
      ForwardContext ctx;
      ctx.mode = Mode::kTrain;
      ctx.rng = cfg.dropout_active ? &rng : nullptr;
      const double loss = step({items, ctx});
      if (!std::isfinite(loss))
        throw NumericError(fmt::format("{}: non-finite loss {} in epoch {} batch {}", what,
                                       loss, epoch + 1, batches + 1));
      opt.step(lr);
      total += loss;
      ++batches;
    }
    curve.push_back(total / static_cast<double>(batches));
    lr *= cfg.lr_decay;
    if (hook) hook(epoch);
  }
  return curve;
}

std::vector<double> train_classifier(Network& net, const Matrix& x,
                                     const std::vector<int>& labels,
                                     const std::string& head, const TrainingConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw DimensionError("label count does not match rows");
  return train(net.parameters(), labels.size(), cfg, [&](const StepInput& in) {
    Matrix batch(static_cast<Eigen::Index>(in.items.size()), x.cols());
    std::vector<int> y(in.items.size());
    for (std::size_t i = 0; i < in.items.size(); ++i) {
      batch.row(i) = x.row(in.items[i]);
      y[i] = labels[in.items[i]];
    }
    const Outputs out = net.forward(batch, in.ctx);
    OutputGradients g;
    const double loss = cross_entropy(out.head(head), y, 1.0, &g.heads[head]);
    net.backward(g, in.ctx);
    return loss;
  });
}

}  // namespace stream_adapt::nn
