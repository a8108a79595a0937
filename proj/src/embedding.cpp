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

#include "stream_adapt/embedding.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"

namespace stream_adapt {

using nn::LayerDesc;

const char* supervision_mode_name(SupervisionMode m) {
  return m == SupervisionMode::kDysarthric ? "dysarthric" : "elderly";
}

SupervisionMode parse_supervision_mode(const std::string& s) {
  if (s == "dysarthric") return SupervisionMode::kDysarthric;
  if (s == "elderly") return SupervisionMode::kElderly;
  throw ConfigError("unknown supervision mode '" + s + "' (dysarthric|elderly)");
}

LossWeights LossWeights::defaults(SupervisionMode m) {
  if (m == SupervisionMode::kElderly) return {0.5, 0.5, 0.0};
  return {};
}

void LossWeights::validate() const {
  if (mse < 0 || group < 0 || speaker < 0) throw ConfigError("loss weights must be nonnegative");
  if (mse + group + speaker <= 0) throw ConfigError("loss weights must not all be zero");
}

int aged_label(int group, int groups) { return 2 * group >= groups ? 1 : 0; }

void EmbeddingDataset::validate(SupervisionMode mode) const {
  const auto n = static_cast<std::size_t>(inputs.rows());
  if (n == 0) throw ConfigError("embedding dataset is empty");
  if (speaker.size() != n || group.size() != n)
    throw DimensionError("embedding labels do not match the sample count");
  if (groups < 2) throw ConfigError("embedding training needs at least two groups");
  for (int g : group)
    if (g < 0 || g >= groups) throw DimensionError(fmt::format("group label {} out of range", g));
  for (int s : speaker)
    if (s < 0 || s >= static_cast<int>(speaker_ids.size()))
      throw DimensionError(fmt::format("speaker index {} out of range", s));
  if (mode == SupervisionMode::kDysarthric && speaker_ids.size() < 2)
    throw ConfigError(fmt::format("speaker head needs at least 2 speakers, dataset has {}",
                                  speaker_ids.size()));
}

nn::NetworkSpec embedding_network_spec(int input_dim, const EmbeddingConfig& cfg, int groups,
                                       int speakers, std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_dim = input_dim;
  s.seed = seed;
  const int h = cfg.hidden;
  s.blocks = {
      {"b1", {LayerDesc::standardize(), LayerDesc::affine(h), LayerDesc::relu(),
              LayerDesc::batch_norm(), LayerDesc::dropout(cfg.dropout)}},
      {"b2", {LayerDesc::affine(h), LayerDesc::relu(), LayerDesc::batch_norm(),
              LayerDesc::dropout(cfg.dropout)}},
      {"b3", {LayerDesc::affine(h), LayerDesc::relu(), LayerDesc::batch_norm()}},
      {kBottleneckTap, {LayerDesc::bottleneck(kEmbeddingDim)}},
  };
  s.skips = {{0, 2}};
  if (cfg.mode == SupervisionMode::kDysarthric) {
    s.heads = {{"group", kBottleneckTap, nn::softmax_head(groups)},
               {"speaker", kBottleneckTap, nn::softmax_head(speakers)}};
  } else {
    s.heads = {{"aged", kBottleneckTap, nn::softmax_head(2)}};
  }
  return s;
}

Matrix SbeModel::embed(const Matrix& inputs) const {
  if (inputs.cols() != input_dim())
    throw DimensionError(fmt::format("embedding expects {}-dim basis features, got {}",
                                     input_dim(), inputs.cols()));
  const auto out = net_.infer(inputs);
  return out.blocks[net_.spec().block_index(kBottleneckTap)];
}

Vector SbeModel::embed_one(const Vector& input) const {
  return embed(input.transpose()).row(0).transpose();
}

void SbeModel::save(const std::filesystem::path& path) const {
  CheckpointWriter w;
  w.add_text("embedding/mode", supervision_mode_name(mode_));
  w.add_text("embedding/variance_regularized", variance_regularized_ ? "1" : "0");
  net_.write(w, "net/");
  w.write(path);
}

SbeModel SbeModel::load(const std::filesystem::path& path) {
  CheckpointReader r(path);
  return SbeModel(nn::Network::read(r, "net/"), parse_supervision_mode(r.text("embedding/mode")),
                  r.text("embedding/variance_regularized") == "1");
}

void SpeakerAverageTable::set(const std::string& speaker_id, Vector v) {
  rows_[speaker_id] = std::move(v);
}

const Vector& SpeakerAverageTable::at(const std::string& speaker_id) const {
  auto it = rows_.find(speaker_id);
  if (it == rows_.end())
    throw MissingSpeakerError("no averaged embedding for speaker '" + speaker_id + "'");
  return it->second;
}

void SpeakerAverageTable::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& [id, v] : rows_) {
    os << id << '\t';
    for (Eigen::Index i = 0; i < v.size(); ++i)
      os << (i ? "," : "") << fmt::format("{:.17g}", v[i]);
    os << '\n';
  }
}

SpeakerAverageTable SpeakerAverageTable::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  SpeakerAverageTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("speaker table line lacks a tab: " + line);
    std::vector<double> vals;
    std::stringstream ss(line.substr(tab + 1));
    for (std::string cell; std::getline(ss, cell, ',');) vals.push_back(std::stod(cell));
    t.set(line.substr(0, tab), Eigen::Map<Vector>(vals.data(), vals.size()));
  }
  return t;
}

SpeakerAverageTable SpeakerAverageTable::from_embeddings(
    const Matrix& embeddings, const std::vector<std::string>& speaker_ids) {
  if (static_cast<Eigen::Index>(speaker_ids.size()) != embeddings.rows())
    throw DimensionError("speaker ids do not match embedding rows");
  std::map<std::string, std::pair<Vector, int>> acc;
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    auto& [sum, n] = acc[speaker_ids[i]];
    if (n == 0)
      sum = embeddings.row(i).transpose();
    else
      sum += embeddings.row(i).transpose();
    ++n;
  }
  SpeakerAverageTable t;
  for (auto& [id, p] : acc) t.set(id, p.first / p.second);
  return t;
}

SpeakerAverageTable average_speaker_embeddings(const SbeModel& model,
                                               const EmbeddingDataset& data) {
  if (data.size() == 0) throw ConfigError("no utterances to average");
  std::vector<std::string> ids(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = data.speaker_ids.at(data.speaker[i]);
  return SpeakerAverageTable::from_embeddings(model.embed(data.inputs), ids);
}

VrSbeLoss vr_sbe_loss(const Matrix& bottleneck, const Matrix& targets,
                      const Matrix* group_log_probs, const std::vector<int>& group_labels,
                      const Matrix* speaker_log_probs, const std::vector<int>& speaker_labels,
                      const LossWeights& w, Matrix* d_bottleneck, Matrix* d_group,
                      Matrix* d_speaker) {
  VrSbeLoss l;
  l.mse = nn::mean_squared_distance(bottleneck, targets, w.mse, d_bottleneck);
  if (group_log_probs) l.group = nn::cross_entropy(*group_log_probs, group_labels, w.group, d_group);
  if (speaker_log_probs)
    l.speaker = nn::cross_entropy(*speaker_log_probs, speaker_labels, w.speaker, d_speaker);
  l.total = w.mse * l.mse + w.group * l.group + w.speaker * l.speaker;
  return l;
}

namespace {

struct Batch {
  Matrix x;
  std::vector<int> speaker, group;
};

Batch gather(const EmbeddingDataset& data, const std::vector<std::size_t>& items,
             SupervisionMode mode) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(items.size()), data.inputs.cols());
  for (std::size_t i = 0; i < items.size(); ++i) {
    b.x.row(i) = data.inputs.row(items[i]);
    b.speaker.push_back(data.speaker[items[i]]);
    const int g = data.group[items[i]];
    b.group.push_back(mode == SupervisionMode::kElderly ? aged_label(g, data.groups) : g);
  }
  return b;
}

SbeModel train_embedding(const EmbeddingDataset& data, const SpeakerAverageTable* table,
                         const LossWeights& weights, const EmbeddingConfig& cfg,
                         std::vector<double>* curve, const SbeModel* init) {
  data.validate(cfg.mode);
  weights.validate();
  Matrix targets;
  if (table) {
    targets.resize(kEmbeddingDim, static_cast<Eigen::Index>(data.speaker_ids.size()));
    for (std::size_t s = 0; s < data.speaker_ids.size(); ++s) {
      const Vector& t = table->at(data.speaker_ids[s]);
      if (t.size() != kEmbeddingDim)
        throw DimensionError(fmt::format("averaged embedding has width {}", t.size()));
      targets.col(static_cast<Eigen::Index>(s)) = t;
    }
  }
  const bool dys = cfg.mode == SupervisionMode::kDysarthric;
  const nn::NetworkSpec spec = embedding_network_spec(
      static_cast<int>(data.inputs.cols()), cfg, data.groups,
      static_cast<int>(data.speaker_ids.size()), cfg.train.seed);
  nn::Network net;
  if (init) {
    // Continue from the phase-2 weights; the architecture must agree.
    nn::NetworkSpec a = init->network().spec(), b = spec;
    a.seed = b.seed = 0;
    if (init->mode() != cfg.mode || a.to_text() != b.to_text())
      throw ConfigError("initial embedding network does not match the training configuration");
    net = init->network();
  } else {
    net = nn::Network(spec);
    nn::fit_standardize(net, data.inputs);
  }
  const int tap = net.spec().block_index(kBottleneckTap);
  const std::string group_head = dys ? "group" : "aged";
  auto losses = nn::train(
      net.parameters(), static_cast<std::size_t>(data.size()), cfg.train,
      [&](const nn::StepInput& in) {
        const Batch b = gather(data, in.items, cfg.mode);
        const nn::Outputs out = net.forward(b.x, in.ctx);
        nn::OutputGradients g;
        if (!table) {
          // Phase 2: equal weights on the classification terms.
          const double w = dys ? 0.5 : 1.0;
          double loss = w * nn::cross_entropy(out.head(group_head), b.group, w,
                                              &g.heads[group_head]);
          if (dys)
            loss += w * nn::cross_entropy(out.head("speaker"), b.speaker, w, &g.heads["speaker"]);
          net.backward(g, in.ctx);
          return loss;
        }
        Matrix t(b.x.rows(), kEmbeddingDim);
        for (Eigen::Index i = 0; i < t.rows(); ++i) t.row(i) = targets.col(b.speaker[i]).transpose();
        Matrix d_tap, d_group, d_spk;
        const VrSbeLoss l = vr_sbe_loss(
            out.blocks[tap], t, &out.head(group_head), b.group,
            dys ? &out.head("speaker") : nullptr, b.speaker, weights, &d_tap, &d_group,
            dys ? &d_spk : nullptr);
        g.taps[kBottleneckTap] = std::move(d_tap);
        g.heads[group_head] = std::move(d_group);
        if (dys) g.heads["speaker"] = std::move(d_spk);
        net.backward(g, in.ctx);
        return l.total;
      },
      table ? "VR-SBE training" : "SBE training");
  if (curve) *curve = std::move(losses);
  return SbeModel(std::move(net), cfg.mode, table != nullptr);
}

}  // namespace

SbeModel train_sbe(const EmbeddingDataset& data, const EmbeddingConfig& cfg,
                   std::vector<double>* curve) {
  return train_embedding(data, nullptr, LossWeights::defaults(cfg.mode), cfg, curve, nullptr);
}

SbeModel train_vr_sbe(const EmbeddingDataset& data, const SpeakerAverageTable& table,
                      const LossWeights& weights, const EmbeddingConfig& cfg,
                      std::vector<double>* curve, const SbeModel* init) {
  return train_embedding(data, &table, weights, cfg, curve, init);
}

std::map<std::string, double> per_speaker_variance(const Matrix& embeddings,
                                                   const std::vector<std::string>& speaker_ids) {
  std::map<std::string, std::vector<Eigen::Index>> rows;
  for (std::size_t i = 0; i < speaker_ids.size(); ++i)
    rows[speaker_ids[i]].push_back(static_cast<Eigen::Index>(i));
  std::map<std::string, double> out;
  for (const auto& [id, idx] : rows) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), embeddings.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(i) = embeddings.row(idx[i]);
    const Matrix c = m.rowwise() - m.colwise().mean();
    out[id] = c.squaredNorm() / static_cast<double>(m.rows());
  }
  return out;
}

}  // namespace stream_adapt
