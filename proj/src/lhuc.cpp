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

#include "stream_adapt/lhuc.hpp"

#include <fmt/format.h>

#include <fstream>

#include "stream_adapt/error.hpp"

namespace stream_adapt {

Vector LhucTransform::scales() const { return nn::lhuc_scale(v); }

void LhucTransform::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << speaker_id << ' ' << layer << ' ' << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) os << fmt::format("{:.17g}\n", v[i]);
}

LhucTransform LhucTransform::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  LhucTransform t;
  long width = 0;
  if (!(is >> t.speaker_id >> t.layer >> width) || width < 0)
    throw FormatError("bad LHUC transform header in " + path.string());
  t.v.resize(width);
  for (long i = 0; i < width; ++i)
    if (!(is >> t.v[i])) throw TruncatedFileError("LHUC transform " + path.string() + " is short");
  return t;
}

LhucTransform identity_transform(const std::string& speaker_id, int layer, int width) {
  return {speaker_id, layer, Vector::Zero(width)};
}

Vector apply_lhuc(const Vector& hidden, const LhucTransform& t) {
  if (hidden.size() != t.v.size())
    throw DimensionError(fmt::format("LHUC transform width {} does not match hidden width {}",
                                     t.v.size(), hidden.size()));
  return hidden.cwiseProduct(t.scales());
}

LhucConfig LhucConfig::from_base(const nn::TrainingConfig& base) {
  LhucConfig c;
  c.train = base;
  c.train.learning_rate = 10.0 * base.learning_rate;
  c.train.epochs = 5;
  c.train.batch_size = 1;
  c.train.lr_decay = 1.0;
  return c;
}

void LhucConfig::validate() const {
  train.validate();
  if (passes < 1) throw ConfigError("multipass adaptation needs at least one pass");
}

namespace {

std::vector<AmItem> owned_by_zero(const std::vector<AmItem>& items) {
  std::vector<AmItem> out = items;
  for (auto& it : out) it.transform = 0;
  return out;
}

}  // namespace

double lhuc_cross_entropy(const AcousticModel& model, const std::vector<AmItem>& items,
                          const Vector* v) {
  Matrix t;
  if (v) t = v->transpose();
  double loss = 0.0;
  long frames = 0;
  for (const auto& raw : items) {
    AmItem it = raw;
    it.transform = v ? 0 : -1;
    const Matrix lp = model.log_posteriors(it, v ? &t : nullptr);
    const auto& y = it.targets();
    for (std::size_t i = 0; i < y.size(); ++i) loss -= lp(static_cast<Eigen::Index>(i), y[i]);
    frames += static_cast<long>(y.size());
  }
  return frames ? loss / static_cast<double>(frames) : 0.0;
}

LhucTransform estimate_lhuc(const AcousticModel& model, const std::vector<AmItem>& items,
                            const LhucConfig& cfg, std::vector<double>* curve) {
  cfg.validate();
  if (items.empty()) throw ConfigError("LHUC estimation needs a nonempty adaptation batch");
  if (model.lhuc_width() == 0) throw ConfigError("acoustic model has no LHUC layer");
  AcousticModel work = model;
  Matrix v = Matrix::Zero(1, model.lhuc_width());
  const auto batch = owned_by_zero(items);
  if (curve) curve->assign(1, lhuc_cross_entropy(model, batch, nullptr));
  FitOptions opt;
  opt.update_model = false;
  opt.update_transforms = true;
  opt.train_mode = false;
  opt.what = "LHUC estimation for " + items.front().data->speaker_id;
  nn::EpochHook hook;
  if (curve)
    hook = [&](int) {
      const Vector row = v.row(0).transpose();
      curve->push_back(lhuc_cross_entropy(work, batch, &row));
    };
  fit_am(work, batch, cfg.train, &v, opt, hook);
  return {items.front().data->speaker_id, model.lhuc_block(), v.row(0).transpose()};
}

SatResult lhuc_sat_train(const std::vector<AmItem>& items,
                         const std::vector<std::string>& speakers, const AmConfig& cfg,
                         bool clamp_transforms) {
  cfg.validate();
  if (speakers.size() < 2) throw ConfigError("LHUC-SAT needs at least two speakers");
  for (const auto& it : items)
    if (it.transform < 0 || it.transform >= static_cast<int>(speakers.size()))
      throw Error(fmt::format("utterance {} has no registered speaker transform",
                              it.data->utt_id));
  SatResult r;
  r.model = AcousticModel(nn::Network(am_network_spec(cfg, cfg.train.seed)), cfg.aux_dim);
  std::vector<const AmItem*> all;
  for (const auto& it : items) all.push_back(&it);
  nn::fit_standardize(r.model.network(), make_am_batch(all, cfg.aux_dim).x);
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(speakers.size()), r.model.lhuc_width());
  FitOptions opt;
  opt.update_transforms = !clamp_transforms;
  opt.what = "LHUC-SAT training";
  r.curve = fit_am(r.model, items, cfg.train, &v, opt);
  for (std::size_t s = 0; s < speakers.size(); ++s)
    r.transforms.push_back({speakers[s], r.model.lhuc_block(),
                            v.row(static_cast<Eigen::Index>(s)).transpose()});
  return r;
}

MultipassResult multipass_adapt(const AcousticModel& model, const std::vector<AmItem>& items,
                                const LhucConfig& cfg,
                                const std::vector<std::vector<int>>* gold) {
  cfg.validate();
  if (items.empty()) throw ConfigError("multipass adaptation needs utterances");
  if (gold && gold->size() != items.size())
    throw DimensionError("gold label list does not match the utterances");
  MultipassResult r;
  r.transform = identity_transform(items.front().data->speaker_id, model.lhuc_block(),
                                   model.lhuc_width());
  auto decode_all = [&](const LhucTransform& t) {
    const Matrix m = t.v.transpose();
    std::vector<std::vector<int>> hyp;
    for (const auto& raw : items) {
      AmItem it = raw;
      it.transform = 0;
      hyp.push_back(nn::argmax_rows(model.log_posteriors(it, &m)));
    }
    return hyp;
  };
  auto accuracy_of = [&](const std::vector<std::vector<int>>& hyp) {
    long hit = 0, n = 0;
    for (std::size_t i = 0; i < items.size(); ++i)
      for (std::size_t t = 0; t < hyp[i].size(); ++t) {
        hit += hyp[i][t] == items[i].data->labels[t];
        ++n;
      }
    return n ? static_cast<double>(hit) / n : 0.0;
  };
  for (int pass = 0; pass < cfg.passes; ++pass) {
    std::vector<std::vector<int>> hyp =
        (pass == 0 && gold) ? *gold : decode_all(r.transform);
    r.label_accuracy.push_back(accuracy_of(hyp));
    std::vector<AmItem> batch = items;
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i].labels = &hyp[i];
    r.transform = estimate_lhuc(model, batch, cfg);
  }
  r.hypotheses = decode_all(r.transform);
  return r;
}

}  // namespace stream_adapt
