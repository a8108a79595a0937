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

#include "stream_adapt/feature_io.hpp"

#include <fmt/format.h>

#include <fstream>

#include "stream_adapt/binary_io.hpp"

namespace stream_adapt {

void write_feature_dump(const std::filesystem::path& path, const Matrix& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  bin::put_magic(os, "SBFX", 4);
  bin::put<std::uint32_t>(os, kFeatureDumpVersion);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(rows.cols()));
  bin::put<std::uint64_t>(os, static_cast<std::uint64_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j)
      bin::put<float>(os, static_cast<float>(rows(i, j)));
}

Matrix read_feature_dump(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  const std::string what = path.string();
  bin::expect_magic(is, "SBFX", 4, what);
  const auto version = bin::get<std::uint32_t>(is, what);
  if (version != kFeatureDumpVersion)
    throw UnsupportedVersionError(
        fmt::format("{}: feature dump version {} unsupported", what, version));
  const auto dim = bin::get<std::uint32_t>(is, what);
  const auto count = bin::get<std::uint64_t>(is, what);
  Matrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = bin::get<float>(is, what);
  return out;
}

}  // namespace stream_adapt
