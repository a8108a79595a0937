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

#include "stream_adapt/acoustic_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"

namespace stream_adapt {

using nn::LayerDesc;

void AmConfig::validate() const {
  if (classes < 2) throw ConfigError("acoustic model needs at least 2 classes");
  if (input_dim < 1 || aux_dim < 0) throw ConfigError("invalid acoustic model input width");
  if (blocks < 3) throw ConfigError("acoustic model needs at least 3 hidden blocks");
  if (hidden < 1 || bottleneck < 1) throw ConfigError("acoustic model widths must be positive");
  if (context.empty()) throw ConfigError("acoustic model context must not be empty");
  train.validate();
}

nn::NetworkSpec am_network_spec(const AmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::NetworkSpec s;
  s.input_dim = cfg.input_dim + cfg.aux_dim;
  s.seed = seed;
  const int h = cfg.hidden;
  s.blocks.push_back({"b1", {LayerDesc::standardize(), LayerDesc::splice(cfg.context),
                             LayerDesc::affine(h), LayerDesc::relu(), LayerDesc::batch_norm(),
                             LayerDesc::lhuc(), LayerDesc::dropout(cfg.dropout)}});
  for (int b = 2; b <= cfg.blocks; ++b) {
    nn::BlockSpec blk{fmt::format("b{}", b),
                      {LayerDesc::bottleneck(cfg.bottleneck), LayerDesc::affine(h),
                       LayerDesc::relu(), LayerDesc::batch_norm()}};
    if (b < cfg.blocks) blk.layers.push_back(LayerDesc::dropout(cfg.dropout));
    s.blocks.push_back(std::move(blk));
  }
  // First block feeds the third, fourth feeds the sixth.
  s.skips.push_back({0, 2});
  if (cfg.blocks >= 6) s.skips.push_back({3, 5});
  s.blocks.push_back({"embedding", {LayerDesc::bottleneck(cfg.bottleneck)}});
  s.heads = {{"out", "embedding", nn::softmax_head(cfg.classes)}};
  return s;
}

AcousticModel::AcousticModel(nn::Network net, int aux_dim)
    : net_(std::move(net)), aux_dim_(aux_dim) {
  const auto [block, index] = net_.find_layer(nn::LayerKind::kLhuc);
  if (block >= 0) {
    lhuc_block_ = block;
    lhuc_width_ = net_.layer(block, index).out_dim();
  }
}

int AcousticModel::classes() const {
  return net_.spec().heads.at(0).layers.front().out;
}

AmBatch make_am_batch(const std::vector<const AmItem*>& items, int aux_dim) {
  AmBatch b;
  int rows = 0;
  for (const auto* it : items) rows += it->data->frames();
  const int in = static_cast<int>(items.front()->data->features.cols());
  b.x.resize(rows, in + aux_dim);
  b.owners.reserve(rows);
  int r = 0;
  for (const auto* it : items) {
    const int t = it->data->frames();
    if (static_cast<int>(it->targets().size()) != t)
      throw DimensionError(fmt::format("utterance {} has {} labels for {} frames",
                                       it->data->utt_id, it->targets().size(), t));
    b.x.block(r, 0, t, in) = it->data->features;
    if (aux_dim > 0) {
      if (it->aux.rows() != t || it->aux.cols() != aux_dim)
        throw DimensionError(fmt::format("utterance {} aux features are {}x{}, expected {}x{}",
                                         it->data->utt_id, it->aux.rows(), it->aux.cols(), t,
                                         aux_dim));
      b.x.block(r, in, t, aux_dim) = it->aux;
    }
    b.labels.insert(b.labels.end(), it->targets().begin(), it->targets().end());
    b.segments.push_back({r, t, -1});
    b.owners.insert(b.owners.end(), static_cast<std::size_t>(t), it->transform);
    r += t;
  }
  return b;
}

Matrix AcousticModel::log_posteriors(const AmItem& item, const Matrix* transforms) const {
  const AmBatch b = make_am_batch({&item}, aux_dim_);
  nn::ForwardContext ctx;
  ctx.segments = b.segments;
  nn::LhucBinding binding{transforms, b.owners, nullptr};
  if (transforms) {
    if (item.transform >= transforms->rows())
      throw MissingSpeakerError(fmt::format("no LHUC transform row {} for {}", item.transform,
                                            item.data->speaker_id));
    ctx.lhuc = &binding;
  }
  return net_.infer(b.x, ctx).head("out");
}

void AcousticModel::save(const std::filesystem::path& path) const {
  CheckpointWriter w;
  w.add_text("am/aux_dim", std::to_string(aux_dim_));
  w.add_text("am/provenance", provenance);
  net_.write(w, "net/");
  w.write(path);
}

AcousticModel AcousticModel::load(const std::filesystem::path& path) {
  CheckpointReader r(path);
  AcousticModel m(nn::Network::read(r, "net/"), std::stoi(r.text("am/aux_dim")));
  m.provenance = r.text("am/provenance");
  return m;
}

std::vector<double> fit_am(AcousticModel& model, const std::vector<AmItem>& items,
                           const nn::TrainingConfig& cfg, Matrix* transforms,
                           const FitOptions& opt, const nn::EpochHook& hook) {
  if (items.empty()) throw ConfigError(opt.what + ": no utterances");
  if (opt.update_transforms && !transforms)
    throw ConfigError(opt.what + ": transform update requested without transforms");
  if (transforms && transforms->cols() != model.lhuc_width())
    throw DimensionError(fmt::format("LHUC transforms have width {}, model layer has {}",
                                     transforms->cols(), model.lhuc_width()));
  nn::Network& net = model.network();
  std::vector<nn::ParamRef> params;
  if (opt.update_model) params = net.parameters();
  Matrix d_transforms;
  if (opt.update_transforms) {
    d_transforms = Matrix::Zero(transforms->rows(), transforms->cols());
    params.push_back({"lhuc", transforms, &d_transforms});
  }
  if (params.empty()) throw ConfigError(opt.what + ": nothing to update");
  return nn::train(
      params, items.size(), cfg,
      [&](const nn::StepInput& in) {
        std::vector<const AmItem*> batch;
        for (auto i : in.items) batch.push_back(&items[i]);
        const AmBatch b = make_am_batch(batch, model.aux_dim());
        in.ctx.mode = opt.train_mode ? nn::Mode::kTrain : nn::Mode::kInfer;
        in.ctx.segments = b.segments;
        in.ctx.parameter_gradients = opt.update_model;
        nn::LhucBinding binding{transforms, b.owners,
                                opt.update_transforms ? &d_transforms : nullptr};
        if (transforms) in.ctx.lhuc = &binding;
        const nn::Outputs out = net.forward(b.x, in.ctx);
        nn::OutputGradients g;
        const double loss = nn::cross_entropy(out.head("out"), b.labels, 1.0, &g.heads["out"]);
        net.backward(g, in.ctx);
        return loss;
      },
      opt.what, hook);
}

AcousticModel train_am(const std::vector<AmItem>& items, const AmConfig& cfg,
                       std::vector<double>* curve) {
  cfg.validate();
  if (items.empty()) throw ConfigError("acoustic model training: no utterances");
  AcousticModel model(nn::Network(am_network_spec(cfg, cfg.train.seed)), cfg.aux_dim);
  std::vector<const AmItem*> all;
  for (const auto& it : items) all.push_back(&it);
  nn::fit_standardize(model.network(), make_am_batch(all, cfg.aux_dim).x);
  auto losses = fit_am(model, items, cfg.train, nullptr, {});
  if (curve) *curve = std::move(losses);
  return model;
}

DecodeOutput decode_frames(const AcousticModel& model, const AmItem& item,
                           const Matrix* transforms) {
  DecodeOutput out;
  out.utt_id = item.data->utt_id;
  out.group = item.data->group;
  out.log_posteriors = model.log_posteriors(item, transforms);
  out.predicted = nn::argmax_rows(out.log_posteriors);
  out.gold = item.data->labels;
  return out;
}

DecodeOutput joint_decode(const DecodeOutput& a, const DecodeOutput& b, double w_a,
                          double w_b) {
  if (a.log_posteriors.rows() != b.log_posteriors.rows() ||
      a.log_posteriors.cols() != b.log_posteriors.cols())
    throw DimensionError(fmt::format("joint decode frame mismatch: {}x{} vs {}x{}",
                                     a.log_posteriors.rows(), a.log_posteriors.cols(),
                                     b.log_posteriors.rows(), b.log_posteriors.cols()));
  if (w_a < 0 || w_b < 0 || w_a + w_b <= 0) throw ConfigError("joint decode weights must be >= 0");
  DecodeOutput out = a;
  Matrix s = w_a * a.log_posteriors + w_b * b.log_posteriors;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    const double lse = m + std::log((s.row(i).array() - m).exp().sum());
    s.row(i).array() -= lse;
  }
  out.log_posteriors = std::move(s);
  out.predicted = nn::argmax_rows(out.log_posteriors);
  return out;
}

Metrics evaluate(const std::vector<DecodeOutput>& outputs, int groups) {
  Metrics m;
  m.groups.resize(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) m.groups[g].group = g;
  for (const auto& o : outputs) {
    if (o.predicted.size() != o.gold.size())
      throw DimensionError(fmt::format("utterance {}: {} predictions for {} gold labels",
                                       o.utt_id, o.predicted.size(), o.gold.size()));
    if (o.group < 0 || o.group >= groups)
      throw DimensionError(fmt::format("utterance {} has group {}", o.utt_id, o.group));
    long err = 0;
    for (std::size_t t = 0; t < o.gold.size(); ++t) err += o.predicted[t] != o.gold[t];
    m.overall.frames += static_cast<long>(o.gold.size());
    m.overall.errors += err;
    m.groups[o.group].frames += static_cast<long>(o.gold.size());
    m.groups[o.group].errors += err;
  }
  return m;
}

void write_metrics_csv(const std::filesystem::path& path, const Metrics& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "group,frames,errors,rate\n";
  for (const auto& g : m.groups)
    os << fmt::format("{},{},{},{:.6f}\n", g.group, g.frames, g.errors, g.rate());
  os << fmt::format("all,{},{},{:.6f}\n", m.overall.frames, m.overall.errors, m.overall.rate());
}

void write_decode_text(const std::filesystem::path& path,
                       const std::vector<DecodeOutput>& outs) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& o : outs) {
    os << o.utt_id;
    for (int p : o.predicted) os << ' ' << p;
    os << '\n';
  }
}

}  // namespace stream_adapt
