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

// "NNCKPT01" container: magic, format version, a self-describing section
// table (name, dtype, shape, byte offset, byte size), the section payloads,
// and a trailing CRC32 over everything before it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stream_adapt/types.hpp"

namespace stream_adapt {

inline constexpr std::uint32_t kCheckpointVersion = 2;

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kText = 2 };

struct CheckpointSection {
  std::string name;
  DType dtype = DType::kFloat64;
  std::vector<std::uint64_t> shape;
  std::string bytes;
};

class CheckpointWriter {
 public:
  // Parameters are stored as float64 so a reload reproduces forward outputs
  // bit for bit; float32 is available for bulky, lossy payloads.
  void add_matrix(const std::string& name, const Matrix& m,
                  DType dtype = DType::kFloat64);
  void add_text(const std::string& name, const std::string& text);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<CheckpointSection> sections_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);

  bool has(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  std::string text(const std::string& name) const;
  std::vector<std::string> names() const;
  std::uint32_t version() const { return version_; }

 private:
  const CheckpointSection& section(const std::string& name) const;

  std::filesystem::path path_;
  std::uint32_t version_ = 0;
  std::map<std::string, CheckpointSection> sections_;
};

std::uint32_t crc32_of(const std::string& bytes);
std::uint32_t crc32_of_file(const std::filesystem::path& path);

}  // namespace stream_adapt
