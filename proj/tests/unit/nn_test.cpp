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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/nn/gradcheck.hpp"
#include "stream_adapt/nn/network.hpp"
#include "stream_adapt/nn/trainer.hpp"

namespace sa = stream_adapt;
using namespace stream_adapt::nn;
using sa::Matrix;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("stream_adapt_nn_" + name);
}

NetworkSpec mlp_spec(int in, int hidden, int classes) {
  NetworkSpec s;
  s.input_dim = in;
  s.seed = 3;
  s.blocks = {{"b0", {LayerDesc::affine(hidden), LayerDesc::relu(), LayerDesc::batch_norm()}},
              {"b1", {LayerDesc::affine(hidden), LayerDesc::sigmoid(), LayerDesc::dropout(0.2)}},
              {"b2", {LayerDesc::affine(hidden), LayerDesc::relu()}}};
  s.heads = {{"out", "b2", softmax_head(classes)}};
  return s;
}

// Two gaussian blobs per class pushed apart along a random direction.
void separable_toy(Matrix* x, std::vector<int>* y) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.3);
  const int rows = 200;
  *x = Matrix(rows, 4);
  y->resize(rows);
  for (int i = 0; i < rows; ++i) {
    const int label = i % 2;
    for (int j = 0; j < 4; ++j) (*x)(i, j) = n(rng);
    (*x)(i, 0) += label ? 2.0 : -2.0;
    (*y)[i] = label;
  }
}

}  // namespace

TEST(NetworkForward, ZeroWeightsGiveUniformPosterior) {
  NetworkSpec s;
  s.input_dim = 3;
  s.blocks = {{"b0", {LayerDesc::affine(4)}}};
  s.heads = {{"out", "b0", softmax_head(7)}};
  Network net(s);
  for (auto& p : net.parameters()) p.value->setZero();
  const Matrix lp = net.infer(random_matrix(5, 3, 1)).head("out");
  for (Eigen::Index i = 0; i < lp.size(); ++i) EXPECT_NEAR(std::exp(lp.data()[i]), 1.0 / 7, 1e-15);
}

TEST(NetworkForward, HandAffine) {
  NetworkSpec s;
  s.input_dim = 2;
  s.blocks = {{"b0", {LayerDesc::affine(2)}}};
  Network net(s);
  auto params = net.parameters();
  // W is in x out, b is 1 x out.
  *params[0].value << 1, 2, 3, 4;
  *params[1].value << 0.5, -1;
  Matrix x(1, 2);
  x << 1, -2;
  const Matrix y = net.infer(x).last();
  EXPECT_DOUBLE_EQ(y(0, 0), 1 * 1 + -2 * 3 + 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 1 * 2 + -2 * 4 - 1);
}

TEST(NetworkForward, SoftmaxRowsSumToOne) {
  Network net(mlp_spec(6, 16, 5));
  const Matrix lp = net.infer(random_matrix(20, 6, 2)).head("out");
  for (Eigen::Index i = 0; i < lp.rows(); ++i)
    EXPECT_NEAR(lp.row(i).array().exp().sum(), 1.0, 1e-6);
}

TEST(NetworkForward, SoftmaxStableAtLargeLogits) {
  NetworkSpec s;
  s.input_dim = 3;
  s.blocks = {{"b0", {LayerDesc::log_softmax()}}};
  Network net(s);
  Matrix x(2, 3);
  x << 1e4, 0, -1e4, 1e4, 1e4 - 1, 3;
  const Matrix lp = net.infer(x).last();
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(lp.row(1).array().exp().sum(), 1.0, 1e-12);
}

TEST(NetworkForward, RejectsWrongWidth) {
  Network net(mlp_spec(6, 8, 3));
  EXPECT_THROW(net.infer(Matrix::Zero(2, 5)), sa::DimensionError);
}

TEST(NetworkForward, RejectsSkipBetweenUnequalWidths) {
  NetworkSpec s;
  s.input_dim = 3;
  s.blocks = {{"b0", {LayerDesc::affine(4)}}, {"b1", {LayerDesc::affine(5)}}};
  s.skips = {{0, 1}};
  EXPECT_THROW(Network{s}, sa::DimensionError);
}

TEST(NetworkForward, DropoutZeroInTrainEqualsInfer) {
  NetworkSpec s;
  s.input_dim = 4;
  s.blocks = {{"b0", {LayerDesc::affine(6), LayerDesc::relu(), LayerDesc::dropout(0.0)}}};
  s.heads = {{"out", "b0", softmax_head(3)}};
  Network net(s);
  const Matrix x = random_matrix(9, 4, 3);
  std::mt19937_64 rng(1);
  ForwardContext ctx;
  ctx.mode = Mode::kTrain;
  ctx.rng = &rng;
  const Matrix train = net.forward(x, ctx).head("out");
  EXPECT_EQ(train, net.infer(x).head("out"));
}

TEST(NetworkForward, BatchNormStandardizesInTrainMode) {
  NetworkSpec s;
  s.input_dim = 5;
  s.blocks = {{"b0", {LayerDesc::batch_norm()}}};
  Network net(s);
  Matrix x = random_matrix(64, 5, 4, 3.0);
  x.col(2).array() += 40.0;
  ForwardContext ctx;
  ctx.mode = Mode::kTrain;
  // Default scale 1 and shift 0, so outputs are the normalized values.
  const Matrix y = net.forward(x, ctx).last();
  for (int j = 0; j < 5; ++j) {
    const double mean = y.col(j).mean();
    const double var = (y.col(j).array() - mean).square().mean();
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(NetworkForward, InferUsesRunningStatistics) {
  NetworkSpec s;
  s.input_dim = 2;
  s.blocks = {{"b0", {LayerDesc::batch_norm()}}};
  Network net(s);
  const Matrix x = random_matrix(32, 2, 5, 2.0);
  ForwardContext ctx;
  ctx.mode = Mode::kTrain;
  const Matrix before = net.infer(x).last();
  net.forward(x, ctx);
  // Fresh running stats are mean 0, variance 1, so infer is close to identity.
  EXPECT_NEAR((before - x).cwiseAbs().maxCoeff(), 0.0, 1e-4);
  EXPECT_GT((net.infer(x).last() - before).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NetworkBackward, RejectsBackwardBeforeForward) {
  Network net(mlp_spec(3, 4, 2));
  ForwardContext ctx;
  OutputGradients g;
  EXPECT_THROW(net.backward(g, ctx), sa::Error);
}

TEST(GradientCheck, MlpWithBatchNormSigmoidDropout) {
  Network net(mlp_spec(5, 7, 4));
  Probe probe;
  probe.heads["out"] = random_matrix(6, 4, 8);
  EXPECT_LE(gradient_check(net, random_matrix(6, 5, 9), probe, {}), 1e-4);
}

TEST(GradientCheck, ContextSpliceAcrossSegments) {
  NetworkSpec s;
  s.input_dim = 3;
  s.seed = 4;
  s.blocks = {{"b0", {LayerDesc::splice({-2, 0, 1}), LayerDesc::affine(4), LayerDesc::sigmoid()}}};
  s.heads = {{"out", "b0", softmax_head(3)}};
  Network net(s);
  CheckContext cf;
  cf.segments = {{0, 4}, {4, 3}};
  Probe probe;
  probe.heads["out"] = random_matrix(7, 3, 10);
  EXPECT_LE(gradient_check(net, random_matrix(7, 3, 11), probe, cf), 1e-4);
}

TEST(GradientCheck, SkipConnectionsAndTaps) {
  NetworkSpec s;
  s.input_dim = 4;
  s.seed = 5;
  s.blocks = {{"b0", {LayerDesc::affine(5), LayerDesc::sigmoid()}},
              {"b1", {LayerDesc::affine(5), LayerDesc::relu()}},
              {"bn", {LayerDesc::bottleneck(3)}},
              {"b3", {LayerDesc::affine(5), LayerDesc::sigmoid()}}};
  s.skips = {{0, 1}, {1, 3}};
  s.heads = {{"out", "b3", softmax_head(3)}, {"aux", "bn", softmax_head(2)}};
  Network net(s);
  Probe probe;
  probe.heads["out"] = random_matrix(5, 3, 12);
  probe.heads["aux"] = random_matrix(5, 2, 13);
  probe.taps["bn"] = random_matrix(5, 3, 14);
  EXPECT_LE(gradient_check(net, random_matrix(5, 4, 15), probe, {}), 1e-4);
}

TEST(GradientCheck, LhucScalingPerRowOwner) {
  NetworkSpec s;
  s.input_dim = 3;
  s.seed = 6;
  s.blocks = {{"b0", {LayerDesc::affine(4), LayerDesc::sigmoid(), LayerDesc::lhuc()}},
              {"b1", {LayerDesc::affine(3)}}};
  Network net(s);
  Matrix v = random_matrix(2, 4, 16, 0.5);
  Matrix dv = Matrix::Zero(2, 4);
  LhucBinding binding{&v, {0, 1, -1, 0, 1}, &dv};
  CheckContext cf;
  cf.lhuc = &binding;
  Probe probe;
  probe.taps["b1"] = random_matrix(5, 3, 17);
  EXPECT_LE(gradient_check(net, random_matrix(5, 3, 18), probe, cf, &v, &dv), 1e-4);
}

TEST(GradientCheck, OnlineAverageWithHistory) {
  NetworkSpec s;
  s.input_dim = 3;
  s.seed = 7;
  s.blocks = {{"b0", {LayerDesc::affine(4), LayerDesc::sigmoid(), LayerDesc::online_average(0.9)}},
              {"b1", {LayerDesc::affine(2)}}};
  Network net(s);
  CheckContext cf;
  cf.history.resize(1);
  cf.history[0].accumulated = sa::Vector::Constant(4, 0.7);
  cf.history[0].frames = 3.0;
  cf.segments = {{0, 3, 0}, {3, 2, -1}};
  Probe probe;
  probe.taps["b1"] = random_matrix(5, 2, 19);
  EXPECT_LE(gradient_check(net, random_matrix(5, 3, 20), probe, cf), 1e-4);
}

TEST(GradientCheck, OnlineAverageChainsSegmentsOfOneSpeaker) {
  NetworkSpec s;
  s.input_dim = 3;
  s.seed = 9;
  s.blocks = {{"b0", {LayerDesc::affine(4), LayerDesc::sigmoid(), LayerDesc::online_average(0.6)}},
              {"b1", {LayerDesc::affine(2)}}};
  Network net(s);
  CheckContext cf;
  cf.history.resize(2);
  cf.history[1].accumulated = sa::Vector::Constant(4, -0.4);
  cf.history[1].frames = 2.0;
  // Later segments of a slot see the sums of earlier ones in the same batch.
  cf.segments = {{0, 2, 0}, {2, 3, 1}, {5, 2, 0}, {7, 1, 1}, {8, 2, 0}};
  Probe probe;
  probe.taps["b1"] = random_matrix(10, 2, 23);
  EXPECT_LE(gradient_check(net, random_matrix(10, 3, 24), probe, cf), 1e-4);
}

TEST(GradientCheck, StandardizeAndBottleneck) {
  NetworkSpec s;
  s.input_dim = 3;
  s.seed = 8;
  s.blocks = {{"b0", {LayerDesc::standardize(), LayerDesc::bottleneck(2), LayerDesc::affine(3),
                      LayerDesc::relu()}}};
  Network net(s);
  auto* state = net.layer(0, 0).state()[0].second;
  state->setConstant(0.3);
  Probe probe;
  probe.taps["b0"] = random_matrix(4, 3, 21);
  EXPECT_LE(gradient_check(net, random_matrix(4, 3, 22), probe, {}), 1e-4);
}

TEST(NetworkBackward, LossWeightIsLinear) {
  NetworkSpec s = mlp_spec(4, 6, 3);
  s.heads.push_back({"aux", "b1", softmax_head(2)});
  Network net(s);
  const Matrix x = random_matrix(8, 4, 23);
  const std::vector<int> y3 = {0, 1, 2, 0, 1, 2, 0, 1};
  const std::vector<int> y2 = {0, 1, 1, 0, 1, 0, 0, 1};
  auto grads = [&](double w_out, double w_aux) {
    std::mt19937_64 rng(1);
    ForwardContext ctx;
    ctx.mode = Mode::kTrain;
    ctx.rng = &rng;
    net.zero_grad();
    const Outputs o = net.forward(x, ctx);
    OutputGradients g;
    cross_entropy(o.head("out"), y3, w_out, &g.heads["out"]);
    cross_entropy(o.head("aux"), y2, w_aux, &g.heads["aux"]);
    net.backward(g, ctx);
    return *net.parameters()[0].grad;
  };
  const Matrix only_out = grads(1.0, 0.0);
  const Matrix both = grads(1.0, 1.0);
  const Matrix doubled = grads(1.0, 2.0);
  const Matrix out_alone = grads(1.0, 0.0);
  EXPECT_EQ(only_out, out_alone);
  const Matrix aux = both - only_out;
  EXPECT_GT(aux.norm(), 0.0);
  EXPECT_LE((doubled - only_out - 2.0 * aux).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Training, SeparableToyReachesFullAccuracy) {
  Matrix x;
  std::vector<int> y;
  separable_toy(&x, &y);
  NetworkSpec s;
  s.input_dim = 4;
  s.seed = 2;
  s.blocks = {{"b0", {LayerDesc::affine(8), LayerDesc::relu()}}};
  s.heads = {{"out", "b0", softmax_head(2)}};
  Network net(s);
  TrainingConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.lr_decay = 0.98;
  const auto curve = train_classifier(net, x, y, "out", cfg);
  ASSERT_EQ(curve.size(), 50u);
  EXPECT_LT(curve.back(), curve.front());
  EXPECT_GE(accuracy(net.infer(x).head("out"), y), 0.99);
}

TEST(Training, ZeroLearningRateLeavesParametersUntouched) {
  Matrix x;
  std::vector<int> y;
  separable_toy(&x, &y);
  Network net(mlp_spec(4, 8, 2));
  const std::uint32_t before = net.checksum();
  const Network copy = net;
  TrainingConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  train_classifier(net, x, y, "out", cfg);
  auto a = net.parameters();
  auto b = const_cast<Network&>(copy).parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].value, *b[i].value);
  // Batch-norm running statistics still move in train mode; parameters do not.
  EXPECT_NE(net.checksum(), before);
}

TEST(Training, SameSeedSameCurve) {
  Matrix x;
  std::vector<int> y;
  separable_toy(&x, &y);
  TrainingConfig cfg;
  cfg.epochs = 4;
  Network a(mlp_spec(4, 8, 2));
  Network b(mlp_spec(4, 8, 2));
  EXPECT_EQ(train_classifier(a, x, y, "out", cfg), train_classifier(b, x, y, "out", cfg));
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Training, NonFiniteLossAborts) {
  Network net(mlp_spec(2, 3, 2));
  TrainingConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(net.parameters(), 4, cfg, [](const StepInput&) { return std::nan(""); }),
               sa::NumericError);
}

TEST(Training, RejectsBadConfig) {
  TrainingConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), sa::ConfigError);
  cfg = {};
  cfg.learning_rate = -1;
  EXPECT_THROW(cfg.validate(), sa::ConfigError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Matrix x;
  std::vector<int> y;
  separable_toy(&x, &y);
  NetworkSpec s = mlp_spec(4, 8, 2);
  s.blocks.push_back({"b3", {LayerDesc::splice({-1, 0, 1}), LayerDesc::affine(8),
                             LayerDesc::lhuc(), LayerDesc::online_average(0.9)}});
  s.skips = {{0, 1}};
  s.heads[0].tap = "b3";
  Network net(s);
  TrainingConfig cfg;
  cfg.epochs = 2;
  train_classifier(net, x, y, "out", cfg);
  const auto path = temp_path("roundtrip.ckpt");
  net.save(path);
  const Network back = Network::load(path);
  EXPECT_EQ(back.spec().to_text(), net.spec().to_text());
  EXPECT_EQ(back.checksum(), net.checksum());
  EXPECT_EQ(back.infer(x).head("out"), net.infer(x).head("out"));
  std::filesystem::remove(path);
}

TEST(Checkpoint, SpecTextRoundTrip) {
  NetworkSpec s = mlp_spec(4, 8, 2);
  s.blocks[0].layers.push_back(LayerDesc::splice({-3, 0, 2}));
  s.skips = {{0, 2}};
  EXPECT_EQ(NetworkSpec::from_text(s.to_text()).to_text(), s.to_text());
}

class CheckpointErrors : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = temp_path("errors.ckpt");
    Network(mlp_spec(3, 4, 2)).save(path_);
    std::ifstream is(path_, std::ios::binary);
    bytes_.assign(std::istreambuf_iterator<char>(is), {});
  }
  void TearDown() override { std::filesystem::remove(path_); }
  void rewrite(const std::string& bytes) {
    std::ofstream os(path_, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::path path_;
  std::string bytes_;
};

TEST_F(CheckpointErrors, CorruptMagic) {
  bytes_[0] = 'X';
  rewrite(bytes_);
  try {
    Network::load(path_);
    FAIL();
  } catch (const sa::UnsupportedVersionError&) {
    FAIL();
  } catch (const sa::FormatError&) {
  }
}

TEST_F(CheckpointErrors, OlderVersion) {
  bytes_[8] = 1;
  rewrite(bytes_);
  EXPECT_THROW(Network::load(path_), sa::UnsupportedVersionError);
}

TEST_F(CheckpointErrors, Truncated) {
  rewrite(bytes_.substr(0, bytes_.size() / 2));
  EXPECT_THROW(Network::load(path_), sa::TruncatedFileError);
}

TEST_F(CheckpointErrors, ChecksumMismatch) {
  bytes_[bytes_.size() - 10] ^= 0x40;
  rewrite(bytes_);
  EXPECT_THROW(Network::load(path_), sa::ChecksumError);
}
