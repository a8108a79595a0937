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
#include <map>

#include "stream_adapt/error.hpp"
#include "stream_adapt/nn/network.hpp"

namespace stream_adapt::nn {

namespace {

std::vector<Segment> effective_segments(const ForwardContext& ctx, Eigen::Index rows) {
  if (!ctx.segments.empty()) return ctx.segments;
  return {Segment{0, static_cast<int>(rows), -1}};
}

class Affine final : public Layer {
 public:
  Affine(int in, int out, bool bias, std::mt19937_64& rng)
      : bias_(bias), w_(in, out), b_(Matrix::Zero(1, out)),
        gw_(Matrix::Zero(in, out)), gb_(Matrix::Zero(1, out)) {
    // He-uniform initialization.
    const double a = std::sqrt(6.0 / std::max(1, in));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < w_.size(); ++i) w_.data()[i] = u(rng);
  }
  LayerDesc desc() const override {
    return bias_ ? LayerDesc::affine(static_cast<int>(w_.cols()))
                 : LayerDesc::bottleneck(static_cast<int>(w_.cols()));
  }
  int out_dim() const override { return static_cast<int>(w_.cols()); }
  Matrix forward(const Matrix& x, ForwardContext&, LayerCache* cache) const override {
    if (x.cols() != w_.rows())
      throw DimensionError(fmt::format("affine layer expects width {}, got {}",
                                       w_.rows(), x.cols()));
    if (cache) cache->input = x;
    Matrix y = x * w_;
    if (bias_) y.rowwise() += b_.row(0);
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache& c) override {
    if (ctx.parameter_gradients) {
      gw_.noalias() += c.input.transpose() * dy;
      if (bias_) gb_ += dy.colwise().sum();
    }
    return dy * w_.transpose();
  }
  std::vector<ParamRef> params() override {
    std::vector<ParamRef> p{{"W", &w_, &gw_}};
    if (bias_) p.push_back({"b", &b_, &gb_});
    return p;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Affine>(*this); }

 private:
  bool bias_;
  Matrix w_, b_, gw_, gb_;
};

class Relu final : public Layer {
 public:
  explicit Relu(int dim) : dim_(dim) {}
  LayerDesc desc() const override { return LayerDesc::relu(); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext&, LayerCache* cache) const override {
    Matrix y = x.cwiseMax(0.0);
    if (cache) cache->input = x;
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext&, const LayerCache& c) override {
    return (c.input.array() > 0.0).select(dy, 0.0);
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  int dim_;
};

class Sigmoid final : public Layer {
 public:
  explicit Sigmoid(int dim) : dim_(dim) {}
  LayerDesc desc() const override { return LayerDesc::sigmoid(); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext&, LayerCache* cache) const override {
    Matrix y = (1.0 + (-x.array()).exp()).inverse().matrix();
    if (cache) cache->output = y;
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext&, const LayerCache& c) override {
    return (dy.array() * c.output.array() * (1.0 - c.output.array())).matrix();
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }

 private:
  int dim_;
};

class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(int dim)
      : gamma_(Matrix::Ones(1, dim)), beta_(Matrix::Zero(1, dim)),
        ggamma_(Matrix::Zero(1, dim)), gbeta_(Matrix::Zero(1, dim)),
        running_mean_(Matrix::Zero(1, dim)), running_var_(Matrix::Ones(1, dim)),
        updates_(Matrix::Zero(1, 1)) {}
  LayerDesc desc() const override { return LayerDesc::batch_norm(); }
  int out_dim() const override { return static_cast<int>(gamma_.cols()); }
  Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache* cache) const override {
    Vector mean, inv_std;
    if (ctx.mode == Mode::kTrain) {
      mean = x.colwise().mean().transpose();
      const Matrix centered = x.rowwise() - mean.transpose();
      const Vector var = centered.array().square().colwise().mean().transpose();
      inv_std = (var.array() + kBatchNormEpsilon).rsqrt().matrix();
    } else {
      mean = running_mean_.row(0).transpose();
      inv_std = (running_var_.row(0).transpose().array() + kBatchNormEpsilon).rsqrt().matrix();
    }
    Matrix xhat = (x.rowwise() - mean.transpose()).array().rowwise() *
                  inv_std.transpose().array();
    Matrix y = (xhat.array().rowwise() * gamma_.row(0).array()).rowwise() +
               beta_.row(0).array();
    if (cache) {
      cache->aux = std::move(xhat);
      cache->mean = mean;
      cache->inv_std = inv_std;
      cache->denominators = {static_cast<double>(ctx.mode == Mode::kTrain)};
    }
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache& c) override {
    const Matrix& xhat = c.aux;
    if (ctx.parameter_gradients) {
      ggamma_ += (dy.array() * xhat.array()).colwise().sum().matrix();
      gbeta_ += dy.colwise().sum();
    }
    const Matrix dxhat = dy.array().rowwise() * gamma_.row(0).array();
    const bool train = !c.denominators.empty() && c.denominators[0] > 0.0;
    if (!train) return dxhat.array().rowwise() * c.inv_std.transpose().array();
    const double n = static_cast<double>(dy.rows());
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum();
    Matrix dx = (n * dxhat.array() - (xhat.array().rowwise() * sum_dxhat_xhat.array())).matrix();
    dx.rowwise() -= sum_dxhat;
    return (dx.array().rowwise() * (c.inv_std.transpose().array() / n)).matrix();
  }
  void after_train_forward(const LayerCache& c) override {
    const RowVector var = (c.inv_std.array().square().inverse() - kBatchNormEpsilon)
                              .matrix().transpose();
    // Cumulative average until the exponential window is full.
    const double rate = std::max(1.0 - kBatchNormMomentum, 1.0 / (updates_(0, 0) + 1.0));
    running_mean_ = (1.0 - rate) * running_mean_ + rate * c.mean.transpose();
    running_var_ = (1.0 - rate) * running_var_ + rate * var;
    updates_(0, 0) += 1.0;
  }
  std::vector<ParamRef> params() override {
    return {{"gamma", &gamma_, &ggamma_}, {"beta", &beta_, &gbeta_}};
  }
  std::vector<std::pair<std::string, Matrix*>> state() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_},
            {"updates", &updates_}};
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  Matrix gamma_, beta_, ggamma_, gbeta_, running_mean_, running_var_, updates_;
};

class Dropout final : public Layer {
 public:
  Dropout(int dim, double p) : dim_(dim), p_(p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  }
  LayerDesc desc() const override { return LayerDesc::dropout(p_); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache* cache) const override {
    if (ctx.mode != Mode::kTrain || p_ == 0.0) {
      if (cache) cache->aux.resize(0, 0);
      return x;
    }
    if (!ctx.rng) throw Error("dropout in train mode needs a random stream");
    std::bernoulli_distribution keep(1.0 - p_);
    Matrix mask(x.rows(), x.cols());
    const double scale = 1.0 / (1.0 - p_);
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = keep(*ctx.rng) ? scale : 0.0;
    Matrix y = x.cwiseProduct(mask);
    if (cache) cache->aux = std::move(mask);
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext&, const LayerCache& c) override {
    if (c.aux.size() == 0) return dy;
    return dy.cwiseProduct(c.aux);
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  int dim_;
  double p_;
};

class ContextSplice final : public Layer {
 public:
  ContextSplice(int in, std::vector<int> offsets) : in_(in), offsets_(std::move(offsets)) {
    if (offsets_.empty()) throw ConfigError("context splice needs offsets");
  }
  LayerDesc desc() const override { return LayerDesc::splice(offsets_); }
  int out_dim() const override { return in_ * static_cast<int>(offsets_.size()); }
  Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache*) const override {
    Matrix y(x.rows(), out_dim());
    for (const auto& seg : effective_segments(ctx, x.rows())) {
      for (int t = 0; t < seg.length; ++t) {
        for (std::size_t k = 0; k < offsets_.size(); ++k) {
          const int src = std::clamp(t + offsets_[k], 0, seg.length - 1);
          y.block(seg.start + t, static_cast<Eigen::Index>(k) * in_, 1, in_) =
              x.row(seg.start + src);
        }
      }
    }
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache&) override {
    Matrix dx = Matrix::Zero(dy.rows(), in_);
    for (const auto& seg : effective_segments(ctx, dy.rows())) {
      for (int t = 0; t < seg.length; ++t) {
        for (std::size_t k = 0; k < offsets_.size(); ++k) {
          const int src = std::clamp(t + offsets_[k], 0, seg.length - 1);
          dx.row(seg.start + src) +=
              dy.block(seg.start + t, static_cast<Eigen::Index>(k) * in_, 1, in_);
        }
      }
    }
    return dx;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ContextSplice>(*this); }

 private:
  int in_;
  std::vector<int> offsets_;
};

class Lhuc final : public Layer {
 public:
  explicit Lhuc(int dim) : dim_(dim) {}
  LayerDesc desc() const override { return LayerDesc::lhuc(); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache* cache) const override {
    if (cache) {
      cache->input = x;
      cache->aux.resize(0, 0);
    }
    if (!ctx.lhuc || !ctx.lhuc->parameters) return x;
    const auto& b = *ctx.lhuc;
    if (b.parameters->cols() != dim_)
      throw DimensionError(fmt::format("LHUC transform width {} does not match layer width {}",
                                       b.parameters->cols(), dim_));
    if (static_cast<Eigen::Index>(b.row_owner.size()) != x.rows())
      throw DimensionError("LHUC row ownership does not cover the batch");
    const Matrix scales = lhuc_scale(*b.parameters);
    Matrix y = x;
    Matrix applied = Matrix::Ones(x.rows(), dim_);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int owner = b.row_owner[i];
      if (owner < 0) continue;
      y.row(i) = x.row(i).cwiseProduct(scales.row(owner));
      applied.row(i) = scales.row(owner);
    }
    if (cache) cache->aux = std::move(applied);
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache& c) override {
    if (c.aux.size() == 0) return dy;
    const auto& b = *ctx.lhuc;
    if (b.gradient) {
      if (b.gradient->rows() != b.parameters->rows() || b.gradient->cols() != dim_)
        throw DimensionError("LHUC gradient accumulator has the wrong shape");
      for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const int owner = b.row_owner[i];
        if (owner < 0) continue;
        // d(2 sigmoid(v))/dv = s (1 - s / 2) with s = 2 sigmoid(v).
        const RowVector s = c.aux.row(i);
        const RowVector ds = s.array() * (1.0 - 0.5 * s.array());
        b.gradient->row(owner) +=
            (dy.row(i).array() * c.input.row(i).array() * ds.array()).matrix();
      }
    }
    return dy.cwiseProduct(c.aux);
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Lhuc>(*this); }

 private:
  int dim_;
};

// Cross-utterance online average: every row of a segment becomes
// (sum of the segment's rows + alpha * G) / (T + alpha * N), with (G, N)
// the speaker's accumulated history.
class OnlineAverage final : public Layer {
 public:
  OnlineAverage(int dim, double alpha) : dim_(dim), alpha_(alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("averaging alpha must lie in [0, 1]");
  }
  LayerDesc desc() const override { return LayerDesc::online_average(alpha_); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache* cache) const override {
    Matrix y(x.rows(), x.cols());
    std::vector<double> denoms;
    for (const auto& seg : effective_segments(ctx, x.rows())) {
      if (seg.length <= 0) {
        denoms.push_back(0.0);
        continue;
      }
      const RowVector sum = x.middleRows(seg.start, seg.length).colwise().sum();
      AverageHistory* h = nullptr;
      if (ctx.average_states && seg.state >= 0)
        h = &ctx.average_states->at(static_cast<std::size_t>(seg.state));
      RowVector numer = sum;
      double denom = seg.length;
      if (h && h->accumulated.size() > 0) {
        numer += alpha_ * h->accumulated.transpose();
        denom += alpha_ * h->frames;
      }
      const RowVector m = numer / denom;
      for (int t = 0; t < seg.length; ++t) y.row(seg.start + t) = m;
      denoms.push_back(denom);
      if (h && ctx.update_average_states) {
        h->accumulated = numer.transpose();
        h->frames = denom;
      }
    }
    if (cache) cache->denominators = std::move(denoms);
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache& c) override {
    Matrix dx(dy.rows(), dy.cols());
    const auto segs = effective_segments(ctx, dy.rows());
    // A segment's accumulated sum feeds every later segment of the same
    // history slot (scaled by alpha), so gradients flow back along the chain.
    const bool chained = ctx.average_states && ctx.update_average_states;
    std::map<int, RowVector> carry;
    for (std::size_t k = segs.size(); k-- > 0;) {
      const auto& seg = segs[k];
      if (seg.length <= 0) continue;
      RowVector g = dy.middleRows(seg.start, seg.length).colwise().sum() / c.denominators.at(k);
      if (chained && seg.state >= 0) {
        auto it = carry.find(seg.state);
        if (it != carry.end()) g += alpha_ * it->second;
        carry[seg.state] = g;
      }
      for (int t = 0; t < seg.length; ++t) dx.row(seg.start + t) = g;
    }
    return dx;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<OnlineAverage>(*this); }

 private:
  int dim_;
  double alpha_;
};

class LogSoftmax final : public Layer {
 public:
  explicit LogSoftmax(int dim) : dim_(dim) {}
  LayerDesc desc() const override { return LayerDesc::log_softmax(); }
  int out_dim() const override { return dim_; }
  Matrix forward(const Matrix& x, ForwardContext&, LayerCache* cache) const override {
    const Vector mx = x.rowwise().maxCoeff();
    Matrix shifted = x.colwise() - mx;
    const Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
    Matrix y = shifted.colwise() - lse;
    if (cache) cache->output = y;
    return y;
  }
  Matrix backward(const Matrix& dy, ForwardContext&, const LayerCache& c) override {
    const Matrix p = c.output.array().exp().matrix();
    const Vector total = dy.rowwise().sum();
    return dy - (p.array().colwise() * total.array()).matrix();
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LogSoftmax>(*this); }

 private:
  int dim_;
};

// Fixed feature standardization; statistics are state, not parameters.
class Standardize final : public Layer {
 public:
  explicit Standardize(int dim)
      : mean_(Matrix::Zero(1, dim)), inv_std_(Matrix::Ones(1, dim)) {}
  LayerDesc desc() const override { return LayerDesc::standardize(); }
  int out_dim() const override { return static_cast<int>(mean_.cols()); }
  Matrix forward(const Matrix& x, ForwardContext&, LayerCache*) const override {
    if (x.cols() != mean_.cols())
      throw DimensionError(fmt::format("standardize layer expects width {}, got {}",
                                       mean_.cols(), x.cols()));
    return ((x.rowwise() - mean_.row(0)).array().rowwise() * inv_std_.row(0).array()).matrix();
  }
  Matrix backward(const Matrix& dy, ForwardContext&, const LayerCache&) override {
    return (dy.array().rowwise() * inv_std_.row(0).array()).matrix();
  }
  std::vector<std::pair<std::string, Matrix*>> state() override {
    return {{"mean", &mean_}, {"inv_std", &inv_std_}};
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Standardize>(*this); }

 private:
  Matrix mean_, inv_std_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerDesc& d, int in, std::mt19937_64& rng) {
  switch (d.kind) {
    case LayerKind::kAffine: return std::make_unique<Affine>(in, d.out, true, rng);
    case LayerKind::kLinearBottleneck: return std::make_unique<Affine>(in, d.out, false, rng);
    case LayerKind::kRelu: return std::make_unique<Relu>(in);
    case LayerKind::kSigmoid: return std::make_unique<Sigmoid>(in);
    case LayerKind::kBatchNorm: return std::make_unique<BatchNorm>(in);
    case LayerKind::kDropout: return std::make_unique<Dropout>(in, d.value);
    case LayerKind::kContextSplice: return std::make_unique<ContextSplice>(in, d.offsets);
    case LayerKind::kLhuc: return std::make_unique<Lhuc>(in);
    case LayerKind::kOnlineAverage: return std::make_unique<OnlineAverage>(in, d.value);
    case LayerKind::kLogSoftmax: return std::make_unique<LogSoftmax>(in);
    case LayerKind::kStandardize: return std::make_unique<Standardize>(in);
  }
  throw ConfigError("unknown layer kind");
}

Matrix lhuc_scale(const Matrix& v) {
  return (2.0 / (1.0 + (-v.array()).exp())).matrix();
}

}  // namespace stream_adapt::nn
