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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "stream_adapt/error.hpp"
#include "stream_adapt/flhuc.hpp"
#include "toy_data.hpp"

namespace sa = stream_adapt;
using sa::Matrix;
using sa::Vector;

namespace {

Matrix constant_rows(int rows, std::initializer_list<double> value) {
  Matrix m(rows, static_cast<Eigen::Index>(value.size()));
  int j = 0;
  for (double v : value) m.col(j++).setConstant(v);
  return m;
}

// Direct evaluation of the weighted sums over every utterance so far.
Vector closed_form(const std::vector<Matrix>& utts, double alpha) {
  const std::size_t r = utts.size() - 1;
  Vector numer = Vector::Zero(utts[0].cols());
  double denom = 0.0;
  for (std::size_t j = 0; j <= r; ++j) {
    const double w = std::pow(alpha, static_cast<double>(r - j));
    numer += w * utts[j].colwise().sum().transpose();
    denom += w * static_cast<double>(utts[j].rows());
  }
  return numer / denom;
}

sa::RegressionConfig small_regression(double alpha = 0.9) {
  sa::RegressionConfig c;
  c.inputs = sa::RegressionInputs::kFbank;
  c.splice_width = 16;
  c.bottleneck = 8;
  c.feedforward = 16;
  c.alpha = alpha;
  c.train.epochs = 30;
  c.train.batch_size = 4;
  c.train.learning_rate = 0.01;
  c.train.seed = 5;
  return c;
}

struct RegressionData {
  std::vector<sa::FrameData> frames;
  std::vector<sa::RegressionItem> items;
};

RegressionData regression_data(int speakers, int utts) {
  RegressionData d;
  for (int s = 0; s < speakers; ++s) {
    const toy::Speaker spk{"s" + std::to_string(s), 0.3 * s, 1.0, 0};
    auto u = toy::make_utterances(spk, utts, 6, 4, 40 + s);
    d.frames.insert(d.frames.end(), u.begin(), u.end());
  }
  for (const auto& f : d.frames) d.items.push_back({&f, nullptr});
  return d;
}

// Identity PCA so network outputs are the targets themselves.
sa::PcaTargets constant_targets(const std::vector<sa::FrameData>& frames, const Vector& value) {
  sa::PcaTargets t;
  const int k = static_cast<int>(value.size());
  t.pca = sa::PcaProjection(Vector::Zero(k), Matrix::Identity(k, k), Vector::Zero(k));
  for (const auto& f : frames) t.targets[f.speaker_id] = value;
  return t;
}

}  // namespace

TEST(OnlineAverage, FirstUtteranceIsPlainMean) {
  sa::OnlineAverageState st{0.9, {}};
  Matrix u(2, 2);
  u << 1, 1, 3, 3;
  const Vector m = st.update(u);
  EXPECT_EQ(m(0), 2.0);
  EXPECT_EQ(st.history.frames, 2.0);
  EXPECT_EQ(st.history.accumulated(1), 4.0);
}

TEST(OnlineAverage, HandRecursion) {
  sa::OnlineAverageState st{0.9, {}};
  Matrix u1(2, 2);
  u1 << 1, 1, 3, 3;
  st.update(u1);
  const Vector m2 = st.update(constant_rows(1, {10, 10}));
  EXPECT_NEAR(m2(0), (10 + 0.9 * 4) / (1 + 0.9 * 2), 1e-15);
  EXPECT_NEAR(m2(1), 4.857142857142857, 1e-12);
}

TEST(OnlineAverage, EmptyUtteranceLeavesStateAlone) {
  sa::OnlineAverageState st{0.5, {}};
  st.update(constant_rows(3, {1.0}));
  const auto before = st.history;
  EXPECT_EQ(st.update(Matrix(0, 1)).size(), 0);
  EXPECT_EQ(st.history.frames, before.frames);
  EXPECT_EQ(st.history.accumulated, before.accumulated);
}

TEST(OnlineAverage, PeekDoesNotAdvance) {
  sa::OnlineAverageState st{0.7, {}};
  st.update(constant_rows(2, {1.0, 2.0}));
  const Matrix u = constant_rows(3, {4.0, -1.0});
  const Vector p = st.peek(u);
  EXPECT_EQ(st.history.frames, 2.0);
  EXPECT_EQ(st.update(u), p);
}

TEST(OnlineAverage, StreamingMatchesClosedForm) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 9);
  for (double alpha : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    sa::OnlineAverageState st{alpha, {}};
    std::vector<Matrix> seen;
    for (int r = 0; r < 12; ++r) {
      Matrix u(len(rng), 4);
      for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = g(rng);
      seen.push_back(u);
      const Vector m = st.update(u);
      EXPECT_LE((m - closed_form(seen, alpha)).cwiseAbs().maxCoeff(), 1e-10)
          << "alpha " << alpha << " utterance " << r;
    }
  }
}

TEST(OnlineAverage, UnitAlphaIgnoresUtteranceBoundaries) {
  Matrix a = Matrix::Random(3, 5), b = Matrix::Random(4, 5);
  sa::OnlineAverageState split{1.0, {}};
  split.update(a);
  const Vector m_split = split.update(b);
  sa::OnlineAverageState joined{1.0, {}};
  Matrix ab(7, 5);
  ab << a, b;
  const Vector m_joined = joined.update(ab);
  EXPECT_LE((m_split - m_joined).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OnlineAverage, LargerAlphaWeighsHistoryMore) {
  // utt 1 is all ones (3 frames), utt 2 all zeros (2 frames): m2 equals the
  // weight carried by utt 1.
  double previous = -1.0;
  for (double alpha = 0.0; alpha <= 1.0; alpha += 0.125) {
    sa::OnlineAverageState st{alpha, {}};
    st.update(constant_rows(3, {1.0}));
    const double w = st.update(constant_rows(2, {0.0}))(0);
    EXPECT_NEAR(w, 3 * alpha / (2 + 3 * alpha), 1e-15);
    EXPECT_GT(w, previous);
    previous = w;
  }
}

TEST(OnlineAverageLayer, AgreesWithReferenceState) {
  sa::nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.blocks = {{"avg", {sa::nn::LayerDesc::online_average(0.8)}}};
  const sa::nn::Network net(spec);
  std::vector<sa::nn::AverageHistory> hist(1);
  sa::OnlineAverageState ref{0.8, {}};
  for (int r = 0; r < 4; ++r) {
    const Matrix u = Matrix::Random(2 + r, 3);
    sa::nn::ForwardContext ctx;
    ctx.segments = {{0, static_cast<int>(u.rows()), 0}};
    ctx.average_states = &hist;
    const Matrix out = net.infer(u, ctx).last();
    const Vector m = ref.update(u);
    for (Eigen::Index t = 0; t < out.rows(); ++t)
      EXPECT_LE((out.row(t).transpose() - m).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pca, HandCaseOnALine) {
  Matrix x(4, 2);
  x << 1, 0, -1, 0, 2, 0, -2, 0;
  const auto p = sa::PcaProjection::fit(x, 1);
  EXPECT_NEAR(p.basis()(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(p.basis()(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(p.eigenvalues()(0), 2.5, 1e-12);
  EXPECT_NEAR(p.eigenvalues()(1), 0.0, 1e-12);
  const Matrix c = p.project(x);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(c(i, 0), x(i, 0), 1e-12);
}

TEST(Pca, ExactSubspaceIsRecoveredWithoutLoss) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Matrix coeff(9, 2), dirs(2, 7);
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < dirs.size(); ++i) dirs.data()[i] = g(rng);
  const Matrix x = (coeff * dirs).rowwise() + Vector::Constant(7, 0.5).transpose();
  const auto p = sa::PcaProjection::fit(x, 2);
  EXPECT_LE((p.reconstruct(p.project(x)) - x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_TRUE((p.basis().transpose() * p.basis()).isApprox(Matrix::Identity(2, 2), 1e-12));
}

TEST(Pca, RoundTripLosesExactlyTheTailMass) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Matrix x(12, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) * (1.0 + (i % 10));
  for (int k = 1; k <= 9; ++k) {
    const auto p = sa::PcaProjection::fit(x, k);
    const double lost = (p.reconstruct(p.project(x)) - x).squaredNorm() / 12.0;
    const double tail = p.eigenvalues().tail(10 - k).sum();
    EXPECT_NEAR(lost, tail, 1e-8 * std::max(1.0, tail)) << "k=" << k;
    for (Eigen::Index i = 1; i < p.eigenvalues().size(); ++i)
      EXPECT_LE(p.eigenvalues()(i), p.eigenvalues()(i - 1));
  }
}

TEST(Pca, SignConventionAndWidthChecks) {
  const Matrix x = Matrix::Random(6, 4);
  const auto p = sa::PcaProjection::fit(x, 3);
  for (int j = 0; j < 3; ++j) {
    Eigen::Index arg;
    p.basis().col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.basis()(arg, j), 0.0);
  }
  EXPECT_THROW(p.project(Matrix::Zero(1, 5)), sa::DimensionError);
  EXPECT_THROW(p.reconstruct(Matrix::Zero(1, 2)), sa::DimensionError);
  EXPECT_THROW(sa::PcaProjection::fit(x, 0), sa::ConfigError);
}

TEST(PcaTargets, DimensionBoundedBySpeakerCount) {
  std::vector<sa::LhucTransform> ts;
  for (int s = 0; s < 4; ++s) ts.push_back({"s" + std::to_string(s), 0, Vector::Random(6)});
  EXPECT_NO_THROW(sa::build_pca_targets(ts, 3));
  EXPECT_THROW(sa::build_pca_targets(ts, 4), sa::ConfigError);
  EXPECT_THROW(sa::build_pca_targets(ts, 0), sa::ConfigError);
  const auto t = sa::build_pca_targets(ts, 3);
  // Three components span four centered points exactly.
  for (const auto& tr : ts) {
    const Matrix back = t.pca.reconstruct(t.targets.at(tr.speaker_id).transpose());
    EXPECT_LE((back.row(0).transpose() - tr.v).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RegressionInputsName, RoundTrip) {
  for (auto r : {sa::RegressionInputs::kFbank, sa::RegressionInputs::kVrSbe,
                 sa::RegressionInputs::kBoth})
    EXPECT_EQ(sa::parse_regression_inputs(sa::regression_inputs_name(r)), r);
  EXPECT_THROW(sa::parse_regression_inputs("ivector"), sa::ConfigError);
}

TEST(Regression, ConstantTargetIsLearned) {
  const auto d = regression_data(3, 6);
  Vector target(2);
  target << 0.5, -0.3;
  std::vector<double> curve;
  const auto model =
      sa::train_regression(d.items, constant_targets(d.frames, target), small_regression(), &curve);
  EXPECT_LT(curve.back(), curve.front());
  double mse = 0.0;
  sa::FlhucPredictor p(model, "s1");
  for (const auto& it : d.items) {
    if (it.data->speaker_id != "s1") continue;
    p.push(it);
    mse += (p.coefficients() - target).squaredNorm();
  }
  EXPECT_LT(mse / 6.0, 1e-3);
}

TEST(Regression, MissingTargetIsReported) {
  const auto d = regression_data(2, 2);
  auto t = constant_targets(d.frames, Vector::Zero(2));
  t.targets.erase("s0");
  EXPECT_THROW(sa::train_regression(d.items, t, small_regression()), sa::MissingSpeakerError);
}

TEST(Regression, SpeakerFeaturesRequiredWhenConfigured) {
  const auto d = regression_data(2, 2);
  auto cfg = small_regression();
  cfg.inputs = sa::RegressionInputs::kBoth;
  EXPECT_THROW(sa::train_regression(d.items, constant_targets(d.frames, Vector::Zero(2)), cfg),
               sa::DimensionError);
}

class TrainedRegression : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new RegressionData(regression_data(3, 5));
    std::vector<sa::LhucTransform> ts;
    for (int s = 0; s < 3; ++s) ts.push_back({"s" + std::to_string(s), 0, Vector::Random(8)});
    auto cfg = small_regression(0.0);
    cfg.train.epochs = 3;
    zero_alpha_ = new sa::RegressionModel(
        sa::train_regression(data_->items, sa::build_pca_targets(ts, 2), cfg));
  }
  static void TearDownTestSuite() {
    delete zero_alpha_;
    delete data_;
  }
  static std::vector<sa::RegressionItem> of(const std::string& spk) {
    std::vector<sa::RegressionItem> out;
    for (const auto& it : data_->items)
      if (it.data->speaker_id == spk) out.push_back(it);
    return out;
  }
  static RegressionData* data_;
  static sa::RegressionModel* zero_alpha_;
};
RegressionData* TrainedRegression::data_ = nullptr;
sa::RegressionModel* TrainedRegression::zero_alpha_ = nullptr;

TEST_F(TrainedRegression, ZeroAlphaForgetsEarlierUtterances) {
  auto items = of("s0");
  sa::FlhucPredictor a(*zero_alpha_, "s0");
  for (const auto& it : items) a.push(it);
  std::swap(items[0], items[2]);
  sa::FlhucPredictor b(*zero_alpha_, "s0");
  for (const auto& it : items) b.push(it);
  EXPECT_EQ(a.coefficients(), b.coefficients());
}

TEST_F(TrainedRegression, ResetIsolatesSpeakers) {
  const auto s0 = of("s0"), s1 = of("s1");
  sa::FlhucPredictor fresh(*zero_alpha_, "s1");
  const auto expected = fresh.push(s1[0]);
  sa::FlhucPredictor reused(*zero_alpha_, "s1");
  for (const auto& it : s0) reused.push(it);
  reused.reset();
  EXPECT_EQ(reused.push(s1[0]).v, expected.v);
}

TEST_F(TrainedRegression, PredictionsStreamPerSpeaker) {
  const auto out = sa::predict_flhuc(*zero_alpha_, data_->items);
  ASSERT_EQ(out.size(), data_->items.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].speaker_id, data_->items[i].data->speaker_id);
    EXPECT_EQ(out[i].width(), 8);
  }
}

TEST_F(TrainedRegression, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "sa_flhuc_test_regression.ckpt";
  zero_alpha_->save(path);
  const auto back = sa::RegressionModel::load(path);
  EXPECT_EQ(back.alpha(), 0.0);
  EXPECT_EQ(back.inputs(), sa::RegressionInputs::kFbank);
  EXPECT_EQ(back.network().checksum(), zero_alpha_->network().checksum());
  EXPECT_EQ(sa::predict_flhuc(back, data_->items)[3].v,
            sa::predict_flhuc(*zero_alpha_, data_->items)[3].v);
  std::filesystem::remove(path);
}

TEST(FlhucFinetune, ZeroLearningRateLeavesModelUnchanged) {
  const toy::Speaker spk{"a", 0.0, 1.0, 0};
  const auto data = toy::make_utterances(spk, 6, 6, 4, 2);
  auto cfg = toy::small_am(6, 4);
  cfg.train.epochs = 2;
  auto am = sa::train_am(toy::items_of(data), cfg);
  const std::uint32_t before = am.network().checksum();
  Matrix transforms = Matrix::Random(1, am.lhuc_width());
  auto tune = cfg.train;
  tune.learning_rate = 0.0;
  tune.epochs = 1;
  sa::am_finetune_with_flhuc(am, toy::items_of(data, 0), transforms, tune);
  EXPECT_EQ(am.network().checksum(), before);
  EXPECT_THROW(sa::am_finetune_with_flhuc(am, toy::items_of(data, 0),
                                          Matrix::Zero(1, am.lhuc_width() + 1), tune),
               sa::DimensionError);
}

TEST(FlhucFinetune, UpdatesModelWithTransformsApplied) {
  const toy::Speaker spk{"a", 0.0, 1.0, 0};
  const auto data = toy::make_utterances(spk, 6, 6, 4, 2);
  auto cfg = toy::small_am(6, 4);
  cfg.train.epochs = 1;
  auto am = sa::train_am(toy::items_of(data), cfg);
  const std::uint32_t before = am.network().checksum();
  const auto curve = sa::am_finetune_with_flhuc(am, toy::items_of(data, 0),
                                                Matrix::Zero(1, am.lhuc_width()), cfg.train);
  EXPECT_NE(am.network().checksum(), before);
  EXPECT_EQ(curve.size(), 1u);
}
