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

#include <Eigen/SVD>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "stream_adapt/error.hpp"
#include "stream_adapt/feature_io.hpp"
#include "stream_adapt/spectral_basis.hpp"

namespace stream_adapt {
namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

double relative_residual(const SpectralDecomposition& dec, const Matrix& a) {
  return (dec.reconstruct() - a).norm() / std::max(1.0, a.norm());
}

void expect_invariants(const SpectralDecomposition& dec, const Matrix& a) {
  const Eigen::Index r = std::min(a.rows(), a.cols());
  ASSERT_EQ(dec.left_vectors.rows(), a.rows());
  ASSERT_EQ(dec.left_vectors.cols(), r);
  ASSERT_EQ(dec.right_vectors.rows(), r);
  ASSERT_EQ(dec.right_vectors.cols(), a.cols());
  const Matrix gram = dec.left_vectors.transpose() * dec.left_vectors;
  EXPECT_LE((gram - Matrix::Identity(r, r)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index j = 0; j < r; ++j) {
    EXPECT_GE(dec.singular_values[j], 0.0);
    if (j > 0) EXPECT_LE(dec.singular_values[j], dec.singular_values[j - 1]);
    Eigen::Index arg;
    dec.left_vectors.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GE(dec.left_vectors(arg, j), 0.0);
  }
  EXPECT_LE(relative_residual(dec, a), 1e-8);
}

TEST(SvdTest, RandomShapesSatisfyInvariants) {
  const std::vector<std::pair<int, int>> shapes = {
      {1, 1}, {1, 7}, {7, 1}, {40, 1}, {40, 3}, {40, 25}, {40, 40}, {40, 50}, {8, 10}, {13, 60}};
  std::uint64_t seed = 1;
  for (auto [r, c] : shapes) {
    const Matrix a = random_matrix(r, c, seed++);
    const auto dec = svd_decompose(a);
    SCOPED_TRACE(::testing::Message() << r << "x" << c);
    expect_invariants(dec, a);
    // Independent route: Eigen's divide-and-conquer SVD.
    Eigen::BDCSVD<Matrix> ref(a);
    const Vector sv = ref.singularValues();
    for (Eigen::Index j = 0; j < sv.size(); ++j)
      EXPECT_NEAR(dec.singular_values[j], sv[j], 1e-10 * std::max(1.0, sv[0]));
  }
}

TEST(SvdTest, Random40x50Reconstructs) {
  const Matrix a = random_matrix(40, 50, 99);
  EXPECT_LE(relative_residual(svd_decompose(a), a), 1e-8);
}

TEST(SvdTest, RankOneHasOneSingularValueAndNormalizedBasis) {
  Vector u(40);
  for (int i = 0; i < 40; ++i) u[i] = -3.0 + 0.1 * i * std::sin(0.3 * i);
  Matrix a(40, 12);
  for (int t = 0; t < 12; ++t) a.col(t) = u;
  const auto dec = svd_decompose(a);
  int nonzero = 0;
  for (Eigen::Index j = 0; j < dec.singular_values.size(); ++j)
    nonzero += dec.singular_values[j] > 1e-10;
  EXPECT_EQ(nonzero, 1);
  const Vector b = dec.left_vectors.col(0);
  const Vector target = u / u.norm();
  EXPECT_LE(std::min((b - target).norm(), (b + target).norm()), 1e-10);
  expect_invariants(dec, a);
}

TEST(SvdTest, RankBoundedByFrameCount) {
  const Matrix a = random_matrix(40, 3, 5);
  const auto dec = svd_decompose(a);
  EXPECT_EQ(dec.singular_values.size(), 3);
  int nonzero = 0;
  for (Eigen::Index j = 0; j < 3; ++j) nonzero += dec.singular_values[j] > 1e-10;
  EXPECT_LE(nonzero, 3);
}

TEST(SvdTest, EckartYoungTruncation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = random_matrix(8, 10, 100 + seed);
    const auto dec = svd_decompose(a);
    for (int d = 1; d <= 8; ++d) {
      const Matrix approx = dec.left_vectors.leftCols(d) *
                            dec.singular_values.head(d).asDiagonal() *
                            dec.right_vectors.topRows(d);
      const double tail = dec.singular_values.tail(8 - d).norm();
      EXPECT_NEAR((a - approx).norm(), tail, 1e-8);
    }
  }
}

TEST(SvdTest, DeterministicAndRejectsNonFinite) {
  const Matrix a = random_matrix(40, 20, 3);
  const auto x = svd_decompose(a), y = svd_decompose(a);
  EXPECT_TRUE((x.left_vectors.array() == y.left_vectors.array()).all());
  Matrix bad = a;
  bad(3, 4) = std::nan("");
  EXPECT_THROW(svd_decompose(bad), NumericError);
  bad(3, 4) = INFINITY;
  EXPECT_THROW(svd_decompose(bad), NumericError);
}

TEST(SvdTest, ZeroMatrixStillHasOrthonormalBases) {
  const Matrix z = Matrix::Zero(6, 4);
  const auto dec = svd_decompose(z);
  expect_invariants(dec, z);
  EXPECT_EQ(dec.singular_values.maxCoeff(), 0.0);
}

TEST(TopBasesTest, DimensionsFollowBasisCount) {
  const auto dec = svd_decompose(random_matrix(40, 60, 1));
  EXPECT_EQ(select_top_bases(dec, 2).values.size(), 80);
  EXPECT_EQ(select_top_bases(dec, 40).values.size(), 1600);
  EXPECT_THROW(select_top_bases(dec, 0), ConfigError);
  EXPECT_THROW(select_top_bases(dec, 41), ConfigError);
  const auto f = select_top_bases(dec, 3);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(f.values.segment(j * 40, 40).norm(), 1.0, 1e-8);
  EXPECT_TRUE((f.values.segment(40, 40).array() == dec.left_vectors.col(1).array()).all());
}

TEST(TopBasesTest, ZeroPadsBeyondWindowRank) {
  const auto dec = svd_decompose(random_matrix(40, 1, 2));
  const auto f = select_top_bases(dec, 3);
  EXPECT_NEAR(f.values.head(40).norm(), 1.0, 1e-12);
  EXPECT_TRUE((f.values.tail(80).array() == 0.0).all());
}

TEST(TopBasesTest, SingleBasisSpansRankOneColumnSpace) {
  Vector u = Vector::LinSpaced(40, -5.0, 2.0);
  Matrix a = u * RowVector::LinSpaced(9, 0.5, 3.0);
  const auto f = select_top_bases(svd_decompose(a), 1);
  const Vector b = f.values;
  const Matrix residual = a - b * (b.transpose() * a);
  EXPECT_LE(residual.norm(), 1e-8);
}

MelSpectrogram random_mel(int frames, std::uint64_t seed) {
  MelSpectrogram mel;
  mel.values = random_matrix(40, frames, seed).array() - 4.0;
  return mel;
}

TEST(StreamingTest, WholeUtteranceMatchesBatchBitForBit) {
  const auto mel = random_mel(47, 8);
  const auto feats = streaming_extract(mel, SlidingWindowSpec::whole_utterance(), 2);
  ASSERT_EQ(feats.size(), 1u);
  const auto batch = select_top_bases(svd_decompose(mel), 2);
  EXPECT_TRUE((feats[0].values.array() == batch.values.array()).all());
  EXPECT_EQ(feats[0].start_frame, 0);
  EXPECT_EQ(feats[0].end_frame, 47);
}

TEST(StreamingTest, TenMsWindowsAreNormalizedColumns) {
  const auto mel = random_mel(15, 9);
  const auto feats = streaming_extract(mel, SlidingWindowSpec::of_ms(10.0), 2);
  ASSERT_EQ(feats.size(), 15u);
  for (int t = 0; t < 15; ++t) {
    const Vector col = mel.values.col(t);
    Vector expect = col / col.norm();
    Eigen::Index arg;
    expect.cwiseAbs().maxCoeff(&arg);
    if (expect[arg] < 0) expect = -expect;
    EXPECT_LE((feats[t].values.head(40) - expect).norm(), 1e-12);
    EXPECT_TRUE((feats[t].values.tail(40).array() == 0.0).all());
    const auto dec = svd_decompose(Matrix(col));
    EXPECT_NEAR(dec.singular_values[0], col.norm(), 1e-12);
  }
}

TEST(StreamingTest, WindowGridFrameCounts) {
  FrameSpec fs;
  const std::vector<std::pair<double, int>> grid = {
      {250, 25}, {150, 15}, {100, 10}, {50, 5}, {30, 3}, {20, 2}, {10, 1}};
  for (auto [ms, frames] : grid) {
    const auto w = SlidingWindowSpec::of_ms(ms);
    EXPECT_EQ(w.width_frames(fs), frames);
    const auto mel = random_mel(60, 10);
    const auto feats = streaming_extract(mel, w, 2);
    EXPECT_EQ(static_cast<int>(feats.size()), 60 / frames) << ms;
    for (const auto& f : feats) EXPECT_EQ(f.end_frame - f.start_frame, frames);
  }
  EXPECT_THROW(SlidingWindowSpec::of_ms(5.0).validate(fs), ConfigError);
  EXPECT_EQ(SlidingWindowSpec::parse("utt").is_whole_utterance(), true);
  EXPECT_EQ(*SlidingWindowSpec::parse("30").width_ms, 30.0);
}

TEST(StreamingTest, ShortStreamEmitsOnePartialFeature) {
  const auto mel = random_mel(4, 11);
  const auto feats = streaming_extract(mel, SlidingWindowSpec::of_ms(250.0), 2);
  ASSERT_EQ(feats.size(), 1u);
  EXPECT_EQ(feats[0].end_frame, 4);
  const auto batch = select_top_bases(svd_decompose(mel), 2);
  EXPECT_TRUE((feats[0].values.array() == batch.values.array()).all());
}

TEST(StreamingTest, NoLookaheadPastWindowEnd) {
  auto mel = random_mel(30, 12);
  const auto w = SlidingWindowSpec::of_ms(50.0);
  const auto before = streaming_extract(mel, w, 3);
  mel.values.rightCols(10) = random_matrix(40, 10, 77);
  const auto after = streaming_extract(mel, w, 3);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool untouched = before[i].end_frame <= 20;
    EXPECT_EQ((before[i].values.array() == after[i].values.array()).all(), untouched) << i;
  }
}

TEST(StreamingTest, FrameToFeatureMapping) {
  EXPECT_EQ(feature_index_for_frame(0, 5, 4), 0);
  EXPECT_EQ(feature_index_for_frame(9, 5, 4), 1);
  EXPECT_EQ(feature_index_for_frame(23, 5, 4), 3);
  EXPECT_EQ(feature_index_for_frame(40, 0, 1), 0);
  EXPECT_THROW(feature_index_for_frame(1, 1, 0), DimensionError);
}

TEST(FeatureDumpTest, RoundTripAndBadMagic) {
  const auto path = std::filesystem::temp_directory_path() / "sa_feats.sbfx";
  const Matrix rows = random_matrix(7, 25, 4);
  write_feature_dump(path, rows);
  const Matrix back = read_feature_dump(path);
  ASSERT_EQ(back.rows(), 7);
  ASSERT_EQ(back.cols(), 25);
  EXPECT_LE((back - rows).cwiseAbs().maxCoeff(), 1e-6);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("SBFQ", 4);
  }
  EXPECT_THROW(read_feature_dump(path), FormatError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace stream_adapt
