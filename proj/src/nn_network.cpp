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

#include <cmath>
#include <sstream>

#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/nn/network.hpp"

namespace stream_adapt::nn {

namespace {

std::string layer_to_text(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::kAffine: return fmt::format("affine {}", d.out);
    case LayerKind::kLinearBottleneck: return fmt::format("linear_bottleneck {}", d.out);
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kDropout: return fmt::format("dropout {}", d.value);
    case LayerKind::kContextSplice: {
      std::string s = "context_splice";
      for (int o : d.offsets) s += fmt::format(" {}", o);
      return s;
    }
    case LayerKind::kLhuc: return "lhuc";
    case LayerKind::kOnlineAverage: return fmt::format("online_average {}", d.value);
    case LayerKind::kLogSoftmax: return "log_softmax";
    case LayerKind::kStandardize: return "standardize";
  }
  return "?";
}

LayerDesc layer_from_tokens(std::istringstream& ss, const std::string& kind) {
  if (kind == "affine") { int o; ss >> o; return LayerDesc::affine(o); }
  if (kind == "linear_bottleneck") { int o; ss >> o; return LayerDesc::bottleneck(o); }
  if (kind == "relu") return LayerDesc::relu();
  if (kind == "sigmoid") return LayerDesc::sigmoid();
  if (kind == "batch_norm") return LayerDesc::batch_norm();
  if (kind == "dropout") { double p; ss >> p; return LayerDesc::dropout(p); }
  if (kind == "context_splice") {
    std::vector<int> offs;
    for (int o; ss >> o;) offs.push_back(o);
    return LayerDesc::splice(offs);
  }
  if (kind == "lhuc") return LayerDesc::lhuc();
  if (kind == "online_average") { double a; ss >> a; return LayerDesc::online_average(a); }
  if (kind == "log_softmax") return LayerDesc::log_softmax();
  if (kind == "standardize") return LayerDesc::standardize();
  throw FormatError("unknown layer kind '" + kind + "' in network spec");
}

}  // namespace

std::vector<LayerDesc> softmax_head(int classes) {
  return {LayerDesc::affine(classes), LayerDesc::log_softmax()};
}

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os << "input " << input_dim << "\n";
  os << "seed " << seed << "\n";
  for (const auto& b : blocks) {
    os << "block " << b.name << "\n";
    for (const auto& l : b.layers) os << "  " << layer_to_text(l) << "\n";
  }
  for (const auto& s : skips) os << "skip " << s.from << " " << s.to << "\n";
  for (const auto& h : heads) {
    os << "head " << h.name << " " << h.tap << "\n";
    for (const auto& l : h.layers) os << "  " << layer_to_text(l) << "\n";
  }
  return os.str();
}

NetworkSpec NetworkSpec::from_text(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string line;
  std::vector<LayerDesc>* current = nullptr;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "input") {
      ss >> spec.input_dim;
    } else if (word == "seed") {
      ss >> spec.seed;
    } else if (word == "block") {
      spec.blocks.push_back({});
      ss >> spec.blocks.back().name;
      current = &spec.blocks.back().layers;
    } else if (word == "skip") {
      SkipSpec s;
      ss >> s.from >> s.to;
      spec.skips.push_back(s);
    } else if (word == "head") {
      spec.heads.push_back({});
      ss >> spec.heads.back().name >> spec.heads.back().tap;
      current = &spec.heads.back().layers;
    } else {
      if (!current) throw FormatError("layer outside block in network spec");
      current->push_back(layer_from_tokens(ss, word));
    }
  }
  return spec;
}

int NetworkSpec::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name == name) return static_cast<int>(i);
  throw ConfigError("network has no block named '" + name + "'");
}

const Matrix& Outputs::head(const std::string& name) const {
  auto it = heads.find(name);
  if (it == heads.end()) throw ConfigError("network has no head named '" + name + "'");
  return it->second;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  if (spec_.input_dim < 1) throw DimensionError("network input width must be positive");
  if (spec_.blocks.empty()) throw ConfigError("network needs at least one block");
  std::mt19937_64 rng(spec_.seed);
  int width = spec_.input_dim;
  for (const auto& b : spec_.blocks) {
    std::vector<std::unique_ptr<Layer>> layers;
    for (const auto& d : b.layers) {
      layers.push_back(make_layer(d, width, rng));
      width = layers.back()->out_dim();
    }
    blocks_.push_back(std::move(layers));
    block_widths_.push_back(width);
  }
  for (const auto& s : spec_.skips) {
    const int n = static_cast<int>(spec_.blocks.size());
    if (s.from < 0 || s.to >= n || s.from >= s.to)
      throw ConfigError(fmt::format("skip {}->{} must point forward", s.from, s.to));
    if (block_widths_[s.from] != block_widths_[s.to])
      throw DimensionError(fmt::format("skip {}->{} joins widths {} and {}", s.from, s.to,
                                       block_widths_[s.from], block_widths_[s.to]));
  }
  for (const auto& h : spec_.heads) {
    const int tap = spec_.block_index(h.tap);
    int w = block_widths_[tap];
    std::vector<std::unique_ptr<Layer>> layers;
    for (const auto& d : h.layers) {
      layers.push_back(make_layer(d, w, rng));
      w = layers.back()->out_dim();
    }
    heads_.push_back(std::move(layers));
    head_taps_.push_back(tap);
  }
}

Network::Network(const Network& o)
    : spec_(o.spec_), block_widths_(o.block_widths_), head_taps_(o.head_taps_) {
  for (const auto& b : o.blocks_) {
    std::vector<std::unique_ptr<Layer>> layers;
    for (const auto& l : b) layers.push_back(l->clone());
    blocks_.push_back(std::move(layers));
  }
  for (const auto& h : o.heads_) {
    std::vector<std::unique_ptr<Layer>> layers;
    for (const auto& l : h) layers.push_back(l->clone());
    heads_.push_back(std::move(layers));
  }
}

Network& Network::operator=(const Network& o) {
  if (this != &o) *this = Network(o);
  return *this;
}

int Network::block_width(const std::string& name) const {
  return block_widths_.at(spec_.block_index(name));
}

Outputs Network::forward(const Matrix& x, ForwardContext& ctx) { return run(x, ctx, true); }

Outputs Network::infer(const Matrix& x, ForwardContext& ctx) const { return run_const(x, ctx); }

Outputs Network::infer(const Matrix& x) const {
  ForwardContext ctx;
  return run_const(x, ctx);
}

Outputs Network::run_const(const Matrix& x, ForwardContext& ctx) const {
  if (x.cols() != spec_.input_dim)
    throw DimensionError(fmt::format("network expects input width {}, got {}",
                                     spec_.input_dim, x.cols()));
  Outputs out;
  Matrix h = x;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (const auto& l : blocks_[b]) h = l->forward(h, ctx, nullptr);
    for (const auto& s : spec_.skips)
      if (s.to == static_cast<int>(b)) h += out.blocks[s.from];
    out.blocks.push_back(h);
  }
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    Matrix y = out.blocks[head_taps_[k]];
    for (const auto& l : heads_[k]) y = l->forward(y, ctx, nullptr);
    out.heads[spec_.heads[k].name] = std::move(y);
  }
  return out;
}

Outputs Network::run(const Matrix& x, ForwardContext& ctx, bool record) {
  if (!record) return run_const(x, ctx);
  if (x.cols() != spec_.input_dim)
    throw DimensionError(fmt::format("network expects input width {}, got {}",
                                     spec_.input_dim, x.cols()));
  block_tape_.assign(blocks_.size(), {});
  head_tape_.assign(heads_.size(), {});
  Outputs out;
  Matrix h = x;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    block_tape_[b].resize(blocks_[b].size());
    for (std::size_t i = 0; i < blocks_[b].size(); ++i) {
      h = blocks_[b][i]->forward(h, ctx, &block_tape_[b][i]);
      if (ctx.mode == Mode::kTrain) blocks_[b][i]->after_train_forward(block_tape_[b][i]);
    }
    for (const auto& s : spec_.skips)
      if (s.to == static_cast<int>(b)) h += out.blocks[s.from];
    out.blocks.push_back(h);
  }
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    head_tape_[k].resize(heads_[k].size());
    Matrix y = out.blocks[head_taps_[k]];
    for (std::size_t i = 0; i < heads_[k].size(); ++i) {
      y = heads_[k][i]->forward(y, ctx, &head_tape_[k][i]);
      if (ctx.mode == Mode::kTrain) heads_[k][i]->after_train_forward(head_tape_[k][i]);
    }
    out.heads[spec_.heads[k].name] = std::move(y);
  }
  has_tape_ = true;
  return out;
}

Matrix Network::backward(const OutputGradients& grads, ForwardContext& ctx) {
  if (!has_tape_) throw Error("backward() called before forward()");
  const std::size_t nb = blocks_.size();
  std::vector<Matrix> block_grad(nb);
  auto accumulate = [&](std::size_t b, const Matrix& g) {
    if (block_grad[b].size() == 0)
      block_grad[b] = g;
    else
      block_grad[b] += g;
  };
  for (const auto& [name, g] : grads.heads) {
    std::size_t k = 0;
    while (k < spec_.heads.size() && spec_.heads[k].name != name) ++k;
    if (k == spec_.heads.size()) throw ConfigError("no head named '" + name + "'");
    Matrix d = g;
    for (std::size_t i = heads_[k].size(); i-- > 0;)
      d = heads_[k][i]->backward(d, ctx, head_tape_[k][i]);
    accumulate(static_cast<std::size_t>(head_taps_[k]), d);
  }
  for (const auto& [name, g] : grads.taps)
    accumulate(static_cast<std::size_t>(spec_.block_index(name)), g);

  Matrix d;
  for (std::size_t b = nb; b-- > 0;) {
    if (block_grad[b].size() == 0) {
      if (b + 1 < nb && d.size() != 0) block_grad[b] = d;
    } else if (b + 1 < nb && d.size() != 0) {
      block_grad[b] += d;
    }
    if (block_grad[b].size() == 0) {
      d.resize(0, 0);
      continue;
    }
    for (const auto& s : spec_.skips)
      if (s.to == static_cast<int>(b)) accumulate(static_cast<std::size_t>(s.from), block_grad[b]);
    d = block_grad[b];
    for (std::size_t i = blocks_[b].size(); i-- > 0;)
      d = blocks_[b][i]->backward(d, ctx, block_tape_[b][i]);
  }
  return d;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (std::size_t i = 0; i < blocks_[b].size(); ++i)
      for (auto p : blocks_[b][i]->params()) {
        p.name = fmt::format("{}/{}/{}", spec_.blocks[b].name, i, p.name);
        out.push_back(p);
      }
  for (std::size_t k = 0; k < heads_.size(); ++k)
    for (std::size_t i = 0; i < heads_[k].size(); ++i)
      for (auto p : heads_[k][i]->params()) {
        p.name = fmt::format("head:{}/{}/{}", spec_.heads[k].name, i, p.name);
        out.push_back(p);
      }
  return out;
}

std::vector<std::pair<std::string, Matrix*>> Network::named_tensors(bool include_state) {
  std::vector<std::pair<std::string, Matrix*>> out;
  auto visit = [&](const std::string& prefix, Layer& l) {
    for (auto& p : l.params()) out.emplace_back(prefix + p.name, p.value);
    if (include_state)
      for (auto& [n, m] : l.state()) out.emplace_back(prefix + n, m);
  };
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (std::size_t i = 0; i < blocks_[b].size(); ++i)
      visit(fmt::format("{}/{}/", spec_.blocks[b].name, i), *blocks_[b][i]);
  for (std::size_t k = 0; k < heads_.size(); ++k)
    for (std::size_t i = 0; i < heads_[k].size(); ++i)
      visit(fmt::format("head:{}/{}/", spec_.heads[k].name, i), *heads_[k][i]);
  return out;
}

void Network::zero_grad() {
  for (auto& p : parameters()) p.grad->setZero();
}

std::uint32_t Network::checksum() const {
  std::string bytes;
  auto& self = const_cast<Network&>(*this);
  for (auto& [name, m] : self.named_tensors(true)) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(m->data()),
                 static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  return crc32_of(bytes);
}

std::pair<int, int> Network::find_layer(LayerKind kind) const {
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (std::size_t i = 0; i < blocks_[b].size(); ++i)
      if (blocks_[b][i]->desc().kind == kind)
        return {static_cast<int>(b), static_cast<int>(i)};
  return {-1, -1};
}

void Network::write(CheckpointWriter& w, const std::string& prefix) const {
  w.add_text(prefix + "spec", spec_.to_text());
  auto& self = const_cast<Network&>(*this);
  for (auto& [name, m] : self.named_tensors(true)) w.add_matrix(prefix + "tensor/" + name, *m);
}

Network Network::read(const CheckpointReader& r, const std::string& prefix) {
  Network net(NetworkSpec::from_text(r.text(prefix + "spec")));
  for (auto& [name, m] : net.named_tensors(true)) {
    const Matrix loaded = r.matrix(prefix + "tensor/" + name);
    if (loaded.rows() != m->rows() || loaded.cols() != m->cols())
      throw FormatError("tensor " + name + " has the wrong shape");
    *m = loaded;
  }
  return net;
}

void Network::save(const std::string& path) const {
  CheckpointWriter w;
  write(w);
  w.write(path);
}

Network Network::load(const std::string& path) { return read(CheckpointReader(path)); }

void fit_standardize(Network& net, const Matrix& data) {
  if (data.rows() == 0) throw ConfigError("cannot fit standardization on empty data");
  const RowVector mean = data.colwise().mean();
  const RowVector sd =
      ((data.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  const RowVector inv = (sd.array() > 1e-8).select(sd.array().inverse(), 1.0).matrix();
  bool found = false;
  for (int i = 0;; ++i) {
    if (static_cast<std::size_t>(i) >= net.spec().blocks.at(0).layers.size()) break;
    if (net.spec().blocks[0].layers[i].kind != LayerKind::kStandardize) continue;
    auto st = net.layer(0, i).state();
    if (st[0].second->cols() != data.cols())
      throw DimensionError("standardization data width mismatch");
    *st[0].second = mean;
    *st[1].second = inv;
    found = true;
  }
  if (!found) throw ConfigError("network has no standardize layer in its first block");
}

double cross_entropy(const Matrix& log_probs, const std::vector<int>& labels, double weight,
                     Matrix* grad) {
  const Eigen::Index n = log_probs.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw DimensionError("label count does not match batch rows");
  if (grad) *grad = Matrix::Zero(n, log_probs.cols());
  if (n == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = labels[i];
    if (l < 0 || l >= log_probs.cols())
      throw DimensionError(fmt::format("label {} outside [0, {})", l, log_probs.cols()));
    loss -= log_probs(i, l);
    if (grad) (*grad)(i, l) = -weight / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

double mean_squared_distance(const Matrix& y, const Matrix& target, double weight,
                             Matrix* grad) {
  if (y.rows() != target.rows() || y.cols() != target.cols())
    throw DimensionError("regression target shape mismatch");
  const Eigen::Index n = y.rows();
  if (n == 0) {
    if (grad) *grad = Matrix::Zero(y.rows(), y.cols());
    return 0.0;
  }
  const Matrix diff = y - target;
  if (grad) *grad = diff * (2.0 * weight / static_cast<double>(n));
  return diff.squaredNorm() / static_cast<double>(n);
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg;
    scores.row(i).maxCoeff(&arg);
    out[i] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(const Matrix& scores, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(scores);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace stream_adapt::nn
