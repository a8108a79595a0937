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

#include "stream_adapt/checkpoint.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "stream_adapt/binary_io.hpp"
#include "stream_adapt/error.hpp"

namespace stream_adapt {

namespace {

constexpr char kMagic[] = "NNCKPT01";
constexpr std::size_t kMagicLen = 8;

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kText: return 1;
  }
  return 1;
}

}  // namespace

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32_of_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::string bytes{std::istreambuf_iterator<char>(is), {}};
  return crc32_of(bytes);
}

void CheckpointWriter::add_matrix(const std::string& name, const Matrix& m,
                                  DType dtype) {
  CheckpointSection s;
  s.name = name;
  s.dtype = dtype;
  s.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  std::ostringstream os;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (dtype == DType::kFloat32)
        bin::put<float>(os, static_cast<float>(m(i, j)));
      else
        bin::put<double>(os, m(i, j));
    }
  s.bytes = os.str();
  sections_.push_back(std::move(s));
}

void CheckpointWriter::add_text(const std::string& name, const std::string& text) {
  sections_.push_back({name, DType::kText, {text.size()}, text});
}

void CheckpointWriter::write(const std::filesystem::path& path) const {
  std::ostringstream head;
  head.write(kMagic, kMagicLen);
  bin::put<std::uint32_t>(head, kCheckpointVersion);
  bin::put<std::uint32_t>(head, static_cast<std::uint32_t>(sections_.size()));
  // Table size first, so payload offsets can be absolute.
  std::size_t table_bytes = 0;
  for (const auto& s : sections_)
    table_bytes += 2 + s.name.size() + 1 + 1 + 8 * s.shape.size() + 8 + 8;
  std::uint64_t offset = kMagicLen + 4 + 4 + table_bytes;
  for (const auto& s : sections_) {
    bin::put<std::uint16_t>(head, static_cast<std::uint16_t>(s.name.size()));
    head.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    bin::put<std::uint8_t>(head, static_cast<std::uint8_t>(s.dtype));
    bin::put<std::uint8_t>(head, static_cast<std::uint8_t>(s.shape.size()));
    for (auto d : s.shape) bin::put<std::uint64_t>(head, d);
    bin::put<std::uint64_t>(head, offset);
    bin::put<std::uint64_t>(head, s.bytes.size());
    offset += s.bytes.size();
  }
  std::string all = head.str();
  for (const auto& s : sections_) all += s.bytes;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(all.data(), static_cast<std::streamsize>(all.size()));
  std::ostringstream tail;
  bin::put<std::uint32_t>(tail, crc32_of(all));
  os << tail.str();
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) : path_(path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  const std::string all{std::istreambuf_iterator<char>(is), {}};
  const std::string what = path.string();
  if (all.size() < kMagicLen) throw TruncatedFileError("truncated checkpoint " + what);
  if (all.compare(0, kMagicLen, kMagic) != 0)
    throw FormatError("bad magic in checkpoint " + what);
  std::istringstream hs(all);
  hs.ignore(kMagicLen);
  version_ = bin::get<std::uint32_t>(hs, what);
  if (version_ != kCheckpointVersion)
    throw UnsupportedVersionError(fmt::format(
        "checkpoint {} has format version {}, this build reads version {}", what,
        version_, kCheckpointVersion));
  const auto count = bin::get<std::uint32_t>(hs, what);
  std::vector<std::pair<CheckpointSection, std::pair<std::uint64_t, std::uint64_t>>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointSection s;
    const auto len = bin::get<std::uint16_t>(hs, what);
    s.name.resize(len);
    if (!hs.read(s.name.data(), len)) throw TruncatedFileError("truncated table in " + what);
    s.dtype = static_cast<DType>(bin::get<std::uint8_t>(hs, what));
    const auto ndim = bin::get<std::uint8_t>(hs, what);
    for (int d = 0; d < ndim; ++d) s.shape.push_back(bin::get<std::uint64_t>(hs, what));
    const auto off = bin::get<std::uint64_t>(hs, what);
    const auto size = bin::get<std::uint64_t>(hs, what);
    table.push_back({std::move(s), {off, size}});
  }
  std::uint64_t end = hs.tellg();
  for (const auto& [s, span] : table) end = std::max(end, span.first + span.second);
  if (all.size() < end + 4) throw TruncatedFileError("truncated checkpoint " + what);
  std::uint32_t stored;
  std::memcpy(&stored, all.data() + end, 4);
  if (crc32_of(all.substr(0, end)) != stored)
    throw ChecksumError("checksum mismatch in checkpoint " + what);
  for (auto& [s, span] : table) {
    s.bytes = all.substr(span.first, span.second);
    std::uint64_t elems = 1;
    for (auto d : s.shape) elems *= d;
    if (elems * dtype_size(s.dtype) != s.bytes.size())
      throw FormatError("section " + s.name + " size disagrees with its shape");
    sections_.emplace(s.name, std::move(s));
  }
}

bool CheckpointReader::has(const std::string& name) const {
  return sections_.count(name) > 0;
}

std::vector<std::string> CheckpointReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : sections_) out.push_back(k);
  return out;
}

const CheckpointSection& CheckpointReader::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end())
    throw FormatError("checkpoint " + path_.string() + " lacks section " + name);
  return it->second;
}

Matrix CheckpointReader::matrix(const std::string& name) const {
  const auto& s = section(name);
  if (s.dtype == DType::kText || s.shape.size() != 2)
    throw FormatError("section " + name + " is not a matrix");
  Matrix m(static_cast<Eigen::Index>(s.shape[0]), static_cast<Eigen::Index>(s.shape[1]));
  std::istringstream is(s.bytes);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = s.dtype == DType::kFloat32 ? bin::get<float>(is, name)
                                           : bin::get<double>(is, name);
  return m;
}

std::string CheckpointReader::text(const std::string& name) const {
  const auto& s = section(name);
  if (s.dtype != DType::kText) throw FormatError("section " + name + " is not text");
  return s.bytes;
}

}  // namespace stream_adapt
