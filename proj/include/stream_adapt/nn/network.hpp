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

// Dense feed-forward network engine. A network is a chain of blocks, each a
// short list of layers. Block outputs double as named hidden taps; skip
// connections add one block's output to a later block's output; heads hang
// off any block and end in a log-softmax (or any other layer stack).

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stream_adapt/types.hpp"

namespace stream_adapt {
class CheckpointWriter;
class CheckpointReader;
}  // namespace stream_adapt

namespace stream_adapt::nn {

enum class Mode { kTrain, kInfer };

enum class LayerKind {
  kAffine,
  kLinearBottleneck,
  kRelu,
  kSigmoid,
  kBatchNorm,
  kDropout,
  kContextSplice,
  kLhuc,
  kOnlineAverage,
  kLogSoftmax,
  kStandardize,
};

struct LayerDesc {
  LayerKind kind = LayerKind::kAffine;
  int out = 0;               // affine / linear_bottleneck width
  double value = 0.0;        // dropout rate or averaging alpha
  std::vector<int> offsets;  // context_splice

  static LayerDesc affine(int out) { return make(LayerKind::kAffine, out); }
  static LayerDesc bottleneck(int out) { return make(LayerKind::kLinearBottleneck, out); }
  static LayerDesc relu() { return make(LayerKind::kRelu); }
  static LayerDesc sigmoid() { return make(LayerKind::kSigmoid); }
  static LayerDesc batch_norm() { return make(LayerKind::kBatchNorm); }
  static LayerDesc dropout(double p) { return make(LayerKind::kDropout, 0, p); }
  static LayerDesc splice(std::vector<int> offsets) {
    LayerDesc d = make(LayerKind::kContextSplice);
    d.offsets = std::move(offsets);
    return d;
  }
  static LayerDesc make(LayerKind kind, int out = 0, double value = 0.0) {
    LayerDesc d;
    d.kind = kind;
    d.out = out;
    d.value = value;
    return d;
  }
  static LayerDesc lhuc() { return make(LayerKind::kLhuc); }
  static LayerDesc online_average(double alpha) {
    return make(LayerKind::kOnlineAverage, 0, alpha);
  }
  static LayerDesc log_softmax() { return make(LayerKind::kLogSoftmax); }
  static LayerDesc standardize() { return make(LayerKind::kStandardize); }
};

struct BlockSpec {
  std::string name;
  std::vector<LayerDesc> layers;
};

// Output of block `from` is added element-wise to the output of block `to`.
struct SkipSpec {
  int from = 0;
  int to = 0;
};

struct HeadSpec {
  std::string name;
  std::string tap;  // block name the head reads from
  std::vector<LayerDesc> layers;
};

// Affine layer followed by log-softmax.
std::vector<LayerDesc> softmax_head(int classes);

struct NetworkSpec {
  int input_dim = 0;
  std::vector<BlockSpec> blocks;
  std::vector<SkipSpec> skips;
  std::vector<HeadSpec> heads;
  std::uint64_t seed = 0;

  std::string to_text() const;
  static NetworkSpec from_text(const std::string& text);
  int block_index(const std::string& name) const;
};

// A contiguous run of rows that belong to one utterance. Context splicing
// clamps at segment edges; online averaging pools per segment.
struct Segment {
  int start = 0;
  int length = 0;
  int state = -1;  // index into ForwardContext::average_states, -1 = fresh
};

// Running cross-utterance statistics of an online averaging layer: the
// accumulated history vector and the weighted frame counter.
struct AverageHistory {
  Vector accumulated;  // empty until first update
  double frames = 0.0;
};

// Per-row LHUC scaling parameters for every kLhuc layer in the network.
struct LhucBinding {
  const Matrix* parameters = nullptr;  // owners x width, raw v (pre-activation)
  std::vector<int> row_owner;          // per batch row, -1 = identity
  Matrix* gradient = nullptr;          // owners x width accumulator, optional
};

struct ForwardContext {
  Mode mode = Mode::kInfer;
  std::vector<Segment> segments;  // empty = whole batch is one segment
  std::mt19937_64* rng = nullptr;  // dropout in train mode
  LhucBinding* lhuc = nullptr;
  std::vector<AverageHistory>* average_states = nullptr;
  bool update_average_states = true;
  // False skips weight/bias gradients (frozen network, LHUC-only updates).
  bool parameter_gradients = true;
};

struct LayerCache {
  Matrix input;
  Matrix output;
  Matrix aux;
  Vector mean;
  Vector inv_std;
  std::vector<double> denominators;
};

struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerDesc desc() const = 0;
  virtual int out_dim() const = 0;
  virtual Matrix forward(const Matrix& x, ForwardContext& ctx, LayerCache* cache) const = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Matrix backward(const Matrix& dy, ForwardContext& ctx, const LayerCache& cache) = 0;
  virtual void after_train_forward(const LayerCache&) {}
  virtual std::vector<ParamRef> params() { return {}; }
  // Non-trained state (batch-norm running stats, standardization).
  virtual std::vector<std::pair<std::string, Matrix*>> state() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

std::unique_ptr<Layer> make_layer(const LayerDesc& desc, int in_dim, std::mt19937_64& rng);

struct Outputs {
  std::vector<Matrix> blocks;
  std::map<std::string, Matrix> heads;

  const Matrix& head(const std::string& name) const;
  const Matrix& last() const { return blocks.back(); }
};

// Loss gradients keyed by head name or block (tap) name.
struct OutputGradients {
  std::map<std::string, Matrix> heads;
  std::map<std::string, Matrix> taps;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

class Network {
 public:
  Network() = default;
  explicit Network(NetworkSpec spec);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim; }
  int block_width(int block) const { return block_widths_.at(block); }
  int block_width(const std::string& name) const;
  int output_dim() const { return block_widths_.back(); }

  // Records a tape for backward().
  Outputs forward(const Matrix& x, ForwardContext& ctx);
  // Tape-free evaluation; safe to call concurrently with separate contexts.
  Outputs infer(const Matrix& x, ForwardContext& ctx) const;
  Outputs infer(const Matrix& x) const;
  // Returns dL/dx. Requires a preceding forward() on the same batch.
  Matrix backward(const OutputGradients& grads, ForwardContext& ctx);

  std::vector<ParamRef> parameters();
  void zero_grad();
  std::uint32_t checksum() const;

  // Finds the first layer of the given kind; returns {block, layer} or {-1,-1}.
  std::pair<int, int> find_layer(LayerKind kind) const;
  Layer& layer(int block, int index) { return *blocks_.at(block).at(index); }

  void write(CheckpointWriter& w, const std::string& prefix = "") const;
  static Network read(const CheckpointReader& r, const std::string& prefix = "");
  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  Outputs run(const Matrix& x, ForwardContext& ctx, bool record) ;
  Outputs run_const(const Matrix& x, ForwardContext& ctx) const;
  std::vector<std::pair<std::string, Matrix*>> named_tensors(bool include_state);

  NetworkSpec spec_;
  std::vector<std::vector<std::unique_ptr<Layer>>> blocks_;
  std::vector<std::vector<std::unique_ptr<Layer>>> heads_;
  std::vector<int> block_widths_;
  std::vector<int> head_taps_;
  std::vector<std::vector<LayerCache>> block_tape_;
  std::vector<std::vector<LayerCache>> head_tape_;
  bool has_tape_ = false;
};

// Mean over rows of -logp[row, label]. Writes weight * dL/dlogp into grad.
double cross_entropy(const Matrix& log_probs, const std::vector<int>& labels,
                     double weight, Matrix* grad);
// Mean over rows of the squared L2 distance. Writes weight * dL/dy into grad.
double mean_squared_distance(const Matrix& y, const Matrix& target, double weight,
                             Matrix* grad);
// Fraction of rows whose argmax equals the label.
double accuracy(const Matrix& scores, const std::vector<int>& labels);
std::vector<int> argmax_rows(const Matrix& scores);

// Sets every standardize layer of the first block to the column mean and
// inverse standard deviation of `data` (rows are samples).
void fit_standardize(Network& net, const Matrix& data);

// 2 * sigmoid(v), element-wise.
Matrix lhuc_scale(const Matrix& v);

}  // namespace stream_adapt::nn
