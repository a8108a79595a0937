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

#include "stream_adapt/error.hpp"
#include "stream_adapt/lhuc.hpp"
#include "toy_data.hpp"

namespace sa = stream_adapt;
using sa::Matrix;
using sa::Vector;

namespace {

struct Fixture {
  std::vector<sa::FrameData> train, shifted_adapt, shifted_test;
  std::vector<std::string> speakers;
  sa::AcousticModel model;
};

// Four training speakers with small offsets; an unseen speaker with a large
// scale change whose data is split into adaptation and test halves.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    for (int s = 0; s < 4; ++s) {
      const std::string id = fmt::format("s{}", s);
      f.speakers.push_back(id);
      auto d = toy::make_utterances({id, 0.05 * s, 1.0, 0}, 12, 6, 4, 200 + s);
      f.train.insert(f.train.end(), d.begin(), d.end());
    }
    auto shifted = toy::make_utterances({"new", 0.0, 0.5, 0}, 16, 6, 4, 300);
    f.shifted_adapt.assign(shifted.begin(), shifted.begin() + 8);
    f.shifted_test.assign(shifted.begin() + 8, shifted.end());
    f.model = sa::train_am(toy::items_of(f.train), toy::small_am(6, 4));
    return f;
  }();
  return f;
}

double accuracy(const sa::AcousticModel& m, const std::vector<sa::FrameData>& data,
                const Vector* v) {
  std::vector<sa::DecodeOutput> outs;
  Matrix t;
  if (v) t = v->transpose();
  for (auto it : toy::items_of(data, v ? 0 : -1)) outs.push_back(sa::decode_frames(m, it, v ? &t : nullptr));
  return sa::evaluate(outs, 1).accuracy();
}

sa::LhucConfig lhuc_cfg() {
  auto c = sa::LhucConfig::from_base(toy::small_am(6, 4).train);
  c.train.epochs = 5;
  return c;
}

}  // namespace

TEST(LhucScale, ClosedForms) {
  Matrix v(1, 3);
  v << 0.0, std::log(3.0), 100.0;
  const Matrix s = sa::nn::lhuc_scale(v);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_NEAR(s(0, 1), 1.5, 1e-15);
  EXPECT_NEAR(s(0, 2), 2.0, 1e-8);
}

TEST(LhucScale, StaysInsideOpenInterval) {
  Matrix v = Vector::LinSpaced(41, -30, 30).transpose();
  const Matrix s = sa::nn::lhuc_scale(v);
  EXPECT_GT(s.minCoeff(), 0.0);
  EXPECT_LE(s.maxCoeff(), 2.0);
}

TEST(ApplyLhuc, ZeroIsIdentityAndWidthIsChecked) {
  const Vector h = Vector::LinSpaced(5, -2, 2);
  EXPECT_EQ(sa::apply_lhuc(h, sa::identity_transform("a", 0, 5)), h);
  EXPECT_THROW(sa::apply_lhuc(h, sa::identity_transform("a", 0, 4)), sa::DimensionError);
  sa::LhucTransform t = sa::identity_transform("a", 0, 5);
  t.v[2] = std::log(3.0);
  EXPECT_NEAR(sa::apply_lhuc(h, t)[4], 2.0, 1e-15);
}

TEST(LhucTransform, TextRoundTrip) {
  sa::LhucTransform t{"spk07", 1, Vector::LinSpaced(6, -1.25, 3.5)};
  t.v[3] = 1.0 / 3.0;
  const auto path = std::filesystem::temp_directory_path() / "stream_adapt_lhuc.txt";
  t.write(path);
  const auto back = sa::LhucTransform::read(path);
  EXPECT_EQ(back.speaker_id, "spk07");
  EXPECT_EQ(back.layer, 1);
  EXPECT_EQ(back.v, t.v);
  std::filesystem::remove(path);
}

TEST(EstimateLhuc, LeavesModelFrozenAndLowersLoss) {
  const auto& f = fixture();
  const std::uint32_t before = f.model.network().checksum();
  std::vector<double> curve;
  const auto t = sa::estimate_lhuc(f.model, toy::items_of(f.shifted_adapt), lhuc_cfg(), &curve);
  EXPECT_EQ(f.model.network().checksum(), before);
  ASSERT_EQ(curve.size(), 6u);
  // Per-utterance SGD is not monotone per epoch; the end point must improve.
  EXPECT_LT(curve.back(), curve.front());
  const auto items = toy::items_of(f.shifted_adapt);
  EXPECT_LT(sa::lhuc_cross_entropy(f.model, items, &t.v),
            sa::lhuc_cross_entropy(f.model, items, nullptr));
  EXPECT_EQ(t.width(), f.model.lhuc_width());
  EXPECT_EQ(t.speaker_id, "new");
}

TEST(EstimateLhuc, InDistributionDataDoesNotHurt) {
  const auto& f = fixture();
  std::vector<sa::FrameData> spk0(f.train.begin(), f.train.begin() + 12);
  const auto items = toy::items_of(spk0);
  const auto t = sa::estimate_lhuc(f.model, items, lhuc_cfg());
  EXPECT_LE(sa::lhuc_cross_entropy(f.model, items, &t.v),
            sa::lhuc_cross_entropy(f.model, items, nullptr));
}

TEST(EstimateLhuc, AdaptationHelpsUnseenSpeaker) {
  const auto& f = fixture();
  const auto t = sa::estimate_lhuc(f.model, toy::items_of(f.shifted_adapt), lhuc_cfg());
  EXPECT_GT(accuracy(f.model, f.shifted_test, &t.v), accuracy(f.model, f.shifted_test, nullptr));
}

TEST(EstimateLhuc, RejectsEmptyBatch) {
  EXPECT_THROW(sa::estimate_lhuc(fixture().model, {}, lhuc_cfg()), sa::ConfigError);
}

TEST(LhucSat, OneTransformPerSpeaker) {
  const auto& f = fixture();
  std::vector<sa::AmItem> items = toy::items_of(f.train);
  for (std::size_t i = 0; i < items.size(); ++i) items[i].transform = static_cast<int>(i / 12);
  auto cfg = toy::small_am(6, 4);
  cfg.train.epochs = 2;
  const auto r = sa::lhuc_sat_train(items, f.speakers, cfg);
  ASSERT_EQ(r.transforms.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(r.transforms[s].speaker_id, f.speakers[s]);
    EXPECT_GT(r.transforms[s].v.norm(), 0.0);
  }
}

TEST(LhucSat, ClampedTransformsReduceToSpeakerIndependentTraining) {
  const auto& f = fixture();
  std::vector<sa::AmItem> items = toy::items_of(f.train);
  for (std::size_t i = 0; i < items.size(); ++i) items[i].transform = static_cast<int>(i / 12);
  auto cfg = toy::small_am(6, 4);
  cfg.train.epochs = 2;
  const auto sat = sa::lhuc_sat_train(items, f.speakers, cfg, true);
  const auto si = sa::train_am(toy::items_of(f.train), cfg);
  EXPECT_EQ(sat.model.network().checksum(), si.network().checksum());
}

TEST(LhucSat, RejectsUnregisteredSpeaker) {
  const auto& f = fixture();
  auto items = toy::items_of(f.train);
  EXPECT_THROW(sa::lhuc_sat_train(items, f.speakers, toy::small_am(6, 4)), sa::Error);
}

TEST(Multipass, SinglePassWithGoldEqualsDirectEstimate) {
  const auto& f = fixture();
  const auto items = toy::items_of(f.shifted_adapt);
  std::vector<std::vector<int>> gold;
  for (const auto& d : f.shifted_adapt) gold.push_back(d.labels);
  auto cfg = lhuc_cfg();
  cfg.passes = 1;
  const auto mp = sa::multipass_adapt(f.model, items, cfg, &gold);
  const auto direct = sa::estimate_lhuc(f.model, items, cfg);
  EXPECT_EQ(mp.transform.v, direct.v);
  EXPECT_EQ(mp.label_accuracy.front(), 1.0);
}

TEST(Multipass, RecordsOneAccuracyPerPass) {
  const auto& f = fixture();
  auto cfg = lhuc_cfg();
  const auto mp = sa::multipass_adapt(f.model, toy::items_of(f.shifted_adapt), cfg);
  EXPECT_EQ(mp.label_accuracy.size(), 2u);
  EXPECT_EQ(mp.hypotheses.size(), f.shifted_adapt.size());
  EXPECT_GE(mp.label_accuracy[1], mp.label_accuracy[0]);
  cfg.passes = 0;
  EXPECT_THROW(sa::multipass_adapt(f.model, toy::items_of(f.shifted_adapt), cfg), sa::ConfigError);
}
