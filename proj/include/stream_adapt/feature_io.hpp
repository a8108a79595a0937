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

// "SBFX" feature dumps: magic, version u32, dim u32, count u64, then
// count x dim little-endian float32 values, row-major.

#include <filesystem>

#include "stream_adapt/types.hpp"

namespace stream_adapt {

inline constexpr std::uint32_t kFeatureDumpVersion = 1;

void write_feature_dump(const std::filesystem::path& path, const Matrix& rows);
Matrix read_feature_dump(const std::filesystem::path& path);

}  // namespace stream_adapt
