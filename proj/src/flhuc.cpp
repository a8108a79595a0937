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

#include "stream_adapt/flhuc.hpp"

#include <fmt/format.h>

#include <Eigen/SVD>

#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"

namespace stream_adapt {

using nn::LayerDesc;

Vector OnlineAverageState::peek(const Matrix& rows) const {
  if (rows.rows() == 0) return {};
  Vector numer = rows.colwise().sum().transpose();
  double denom = static_cast<double>(rows.rows());
  if (history.accumulated.size() > 0) {
    numer += alpha * history.accumulated;
    denom += alpha * history.frames;
  }
  return numer / denom;
}

Vector OnlineAverageState::update(const Matrix& rows) {
  if (rows.rows() == 0) return {};
  Vector numer = rows.colwise().sum().transpose();
  double denom = static_cast<double>(rows.rows());
  if (history.accumulated.size() > 0) {
    numer += alpha * history.accumulated;
    denom += alpha * history.frames;
  }
  history.accumulated = numer;
  history.frames = denom;
  return numer / denom;
}

PcaProjection PcaProjection::fit(const Matrix& data, int k) {
  const Eigen::Index n = data.rows(), w = data.cols();
  if (n < 1) throw ConfigError("PCA needs at least one row");
  if (k < 1 || k > w) throw ConfigError(fmt::format("PCA dimension {} outside [1, {}]", k, w));
  const Vector mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - mean.transpose();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeFullV);
  Vector eig = Vector::Zero(w);
  const Vector& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size(); ++i) eig[i] = s[i] * s[i] / static_cast<double>(n);
  Matrix basis = svd.matrixV().leftCols(k);
  for (int j = 0; j < k; ++j) {
    Eigen::Index arg;
    basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, j) < 0) basis.col(j) = -basis.col(j);
  }
  return PcaProjection(mean, basis, eig);
}

Matrix PcaProjection::project(const Matrix& rows) const {
  if (rows.cols() != width())
    throw DimensionError(fmt::format("PCA expects width {}, got {}", width(), rows.cols()));
  return (rows.rowwise() - mean_.transpose()) * basis_;
}

Matrix PcaProjection::reconstruct(const Matrix& coefficients) const {
  if (coefficients.cols() != k())
    throw DimensionError(fmt::format("PCA expects {} coefficients, got {}", k(),
                                     coefficients.cols()));
  return (coefficients * basis_.transpose()).rowwise() + mean_.transpose();
}

void PcaProjection::write(CheckpointWriter& w, const std::string& prefix) const {
  w.add_matrix(prefix + "mean", mean_);
  w.add_matrix(prefix + "basis", basis_);
  w.add_matrix(prefix + "eigenvalues", eigenvalues_);
}

PcaProjection PcaProjection::read(const CheckpointReader& r, const std::string& prefix) {
  return PcaProjection(r.matrix(prefix + "mean"), r.matrix(prefix + "basis"),
                       r.matrix(prefix + "eigenvalues"));
}

PcaTargets build_pca_targets(const std::vector<LhucTransform>& transforms, int k) {
  const int s = static_cast<int>(transforms.size());
  if (k < 1 || k > s - 1)
    throw ConfigError(fmt::format("target dimension {} needs 1 <= k <= #speakers - 1 = {}", k,
                                  s - 1));
  Matrix data(s, transforms.front().width());
  for (int i = 0; i < s; ++i) {
    if (transforms[i].width() != data.cols())
      throw DimensionError("LHUC transforms differ in width");
    data.row(i) = transforms[i].v.transpose();
  }
  PcaTargets out;
  out.pca = PcaProjection::fit(data, k);
  const Matrix coeff = out.pca.project(data);
  for (int i = 0; i < s; ++i) out.targets[transforms[i].speaker_id] = coeff.row(i).transpose();
  return out;
}

const char* regression_inputs_name(RegressionInputs r) {
  switch (r) {
    case RegressionInputs::kFbank: return "fbk";
    case RegressionInputs::kVrSbe: return "vrsbe";
    case RegressionInputs::kBoth: return "both";
  }
  return "?";
}

RegressionInputs parse_regression_inputs(const std::string& s) {
  if (s == "fbk") return RegressionInputs::kFbank;
  if (s == "vrsbe") return RegressionInputs::kVrSbe;
  if (s == "both") return RegressionInputs::kBoth;
  throw ConfigError("unknown regression inputs '" + s + "' (fbk|vrsbe|both)");
}

nn::NetworkSpec regression_network_spec(int input_dim, int k, const RegressionConfig& cfg,
                                        std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_dim = input_dim;
  s.seed = seed;
  const int w = cfg.splice_width, b = cfg.bottleneck, f = cfg.feedforward;
  s.blocks = {
      {"s1", {LayerDesc::standardize(), LayerDesc::splice({-2, -1, 0, 1, 2}),
              LayerDesc::affine(w), LayerDesc::relu()}},
      {"s2", {LayerDesc::bottleneck(b), LayerDesc::splice({-2, 0, 2}), LayerDesc::affine(w),
              LayerDesc::relu()}},
      {"s3", {LayerDesc::bottleneck(b), LayerDesc::splice({-3, 0, 3}), LayerDesc::affine(w),
              LayerDesc::relu()}},
      {"s4", {LayerDesc::bottleneck(b), LayerDesc::splice({-4, 0, 4}), LayerDesc::affine(w),
              LayerDesc::relu()}},
      {"f1", {LayerDesc::affine(f), LayerDesc::sigmoid()}},
      {"f2", {LayerDesc::affine(f), LayerDesc::online_average(cfg.alpha), LayerDesc::sigmoid()}},
      {"out", {LayerDesc::affine(k)}},
  };
  return s;
}

Matrix RegressionModel::input_rows(const RegressionItem& item) const {
  const Matrix& fb = item.data->features;
  auto need_spk = [&]() -> const Matrix& {
    if (!item.speaker_features)
      throw DimensionError("regression input for " + item.data->utt_id +
                           " lacks speaker features");
    if (item.speaker_features->rows() != fb.rows())
      throw DimensionError("speaker features do not match frame count for " +
                           item.data->utt_id);
    return *item.speaker_features;
  };
  switch (inputs_) {
    case RegressionInputs::kFbank: return fb;
    case RegressionInputs::kVrSbe: return need_spk();
    case RegressionInputs::kBoth: {
      const Matrix& sp = need_spk();
      Matrix x(fb.rows(), fb.cols() + sp.cols());
      x << fb, sp;
      return x;
    }
  }
  return {};
}

void RegressionModel::save(const std::filesystem::path& path) const {
  CheckpointWriter w;
  w.add_text("regression/inputs", regression_inputs_name(inputs_));
  w.add_text("regression/alpha", fmt::format("{:.17g}", alpha_));
  pca_.write(w, "pca/");
  net_.write(w, "net/");
  w.write(path);
}

RegressionModel RegressionModel::load(const std::filesystem::path& path) {
  CheckpointReader r(path);
  return RegressionModel(nn::Network::read(r, "net/"), PcaProjection::read(r, "pca/"),
                         parse_regression_inputs(r.text("regression/inputs")),
                         std::stod(r.text("regression/alpha")));
}

FlhucPredictor::FlhucPredictor(const RegressionModel& model, std::string speaker_id)
    : model_(&model), speaker_id_(std::move(speaker_id)), history_(1) {}

LhucTransform FlhucPredictor::push(const RegressionItem& item) {
  const Matrix x = model_->input_rows(item);
  if (x.rows() == 0) throw TooShortError("empty utterance " + item.data->utt_id);
  nn::ForwardContext ctx;
  ctx.segments = {{0, static_cast<int>(x.rows()), 0}};
  ctx.average_states = &history_;
  ctx.update_average_states = true;
  const auto out = model_->network().infer(x, ctx);
  coefficients_ = out.last().row(0).transpose();
  const Matrix v = model_->pca().reconstruct(coefficients_.transpose());
  return {speaker_id_, -1, v.row(0).transpose()};
}

namespace {

// History of each item's speaker before the item, using the current network.
std::vector<nn::AverageHistory> history_snapshots(const nn::Network& net,
                                                  const RegressionModel& shape,
                                                  const std::vector<RegressionItem>& items) {
  std::vector<nn::AverageHistory> snap(items.size());
  std::map<std::string, std::vector<nn::AverageHistory>> state;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& st = state[items[i].data->speaker_id];
    if (st.empty()) st.resize(1);
    snap[i] = st[0];
    const Matrix x = shape.input_rows(items[i]);
    nn::ForwardContext ctx;
    ctx.segments = {{0, static_cast<int>(x.rows()), 0}};
    ctx.average_states = &st;
    net.infer(x, ctx);
  }
  return snap;
}

}  // namespace

RegressionModel train_regression(const std::vector<RegressionItem>& items,
                                 const PcaTargets& targets, const RegressionConfig& cfg,
                                 std::vector<double>* curve) {
  if (items.empty()) throw ConfigError("regression training needs utterances");
  const int k = targets.pca.k();
  std::vector<const Vector*> item_target;
  for (const auto& it : items) {
    auto f = targets.targets.find(it.data->speaker_id);
    if (f == targets.targets.end())
      throw MissingSpeakerError("no f-LHUC target for speaker " + it.data->speaker_id);
    item_target.push_back(&f->second);
  }
  RegressionModel shape(nn::Network{}, targets.pca, cfg.inputs, cfg.alpha);
  const int in_dim = static_cast<int>(shape.input_rows(items.front()).cols());
  RegressionModel model(nn::Network(regression_network_spec(in_dim, k, cfg, cfg.train.seed)),
                        targets.pca, cfg.inputs, cfg.alpha);
  {
    std::vector<Matrix> rows;
    Eigen::Index n = 0;
    for (const auto& it : items) {
      rows.push_back(model.input_rows(it));
      n += rows.back().rows();
    }
    Matrix all(n, in_dim);
    Eigen::Index r = 0;
    for (const auto& m : rows) {
      all.middleRows(r, m.rows()) = m;
      r += m.rows();
    }
    nn::fit_standardize(model.network(), all);
  }
  nn::Network& net = model.network();
  std::vector<nn::AverageHistory> snapshots = history_snapshots(net, model, items);
  auto losses = nn::train(
      net.parameters(), items.size(), cfg.train,
      [&](const nn::StepInput& in) {
        std::vector<Matrix> xs;
        Eigen::Index n = 0;
        for (auto i : in.items) {
          xs.push_back(model.input_rows(items[i]));
          n += xs.back().rows();
        }
        Matrix x(n, in_dim);
        in.ctx.segments.clear();
        int r = 0;
        for (std::size_t j = 0; j < xs.size(); ++j) {
          x.middleRows(r, xs[j].rows()) = xs[j];
          in.ctx.segments.push_back(
              {r, static_cast<int>(xs[j].rows()), static_cast<int>(in.items[j])});
          r += static_cast<int>(xs[j].rows());
        }
        in.ctx.average_states = &snapshots;
        in.ctx.update_average_states = false;
        const auto out = net.forward(x, in.ctx);
        const Matrix& y = out.last();
        // One regression sample per utterance: the (constant) output row.
        Matrix y_utt(static_cast<Eigen::Index>(xs.size()), k), t(y_utt.rows(), k);
        for (std::size_t j = 0; j < xs.size(); ++j) {
          y_utt.row(j) = y.row(in.ctx.segments[j].start);
          t.row(j) = item_target[in.items[j]]->transpose();
        }
        Matrix dy_utt;
        const double loss = nn::mean_squared_distance(y_utt, t, 1.0, &dy_utt);
        nn::OutputGradients g;
        Matrix dy = Matrix::Zero(y.rows(), k);
        for (std::size_t j = 0; j < xs.size(); ++j)
          dy.row(in.ctx.segments[j].start) = dy_utt.row(j);
        g.taps["out"] = std::move(dy);
        net.backward(g, in.ctx);
        return loss;
      },
      "f-LHUC regression training",
      [&](int) { snapshots = history_snapshots(net, model, items); });
  if (curve) *curve = std::move(losses);
  return model;
}

std::vector<LhucTransform> predict_flhuc(const RegressionModel& model,
                                         const std::vector<RegressionItem>& items) {
  std::map<std::string, FlhucPredictor> predictors;
  std::vector<LhucTransform> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    const std::string& spk = it.data->speaker_id;
    auto p = predictors.try_emplace(spk, model, spk).first;
    out.push_back(p->second.push(it));
  }
  return out;
}

std::vector<double> am_finetune_with_flhuc(AcousticModel& am, const std::vector<AmItem>& items,
                                           const Matrix& transforms,
                                           const nn::TrainingConfig& cfg) {
  if (transforms.cols() != am.lhuc_width())
    throw DimensionError(fmt::format("f-LHUC transforms have width {}, AM layer has {}",
                                     transforms.cols(), am.lhuc_width()));
  Matrix fixed = transforms;
  FitOptions opt;
  opt.train_mode = false;  // frozen batch-norm statistics
  opt.what = "f-LHUC acoustic model fine-tuning";
  return fit_am(am, items, cfg, &fixed, opt);
}

}  // namespace stream_adapt
