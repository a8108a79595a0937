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

// Little-endian primitive readers/writers shared by the binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "stream_adapt/error.hpp"

namespace stream_adapt::bin {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T)))
    throw TruncatedFileError("truncated while reading " + what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void put_magic(std::ostream& os, const char* magic, std::size_t n) {
  os.write(magic, static_cast<std::streamsize>(n));
}

inline void expect_magic(std::istream& is, const char* magic, std::size_t n,
                         const std::string& what) {
  std::string got(n, '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(n)))
    throw TruncatedFileError("truncated header in " + what);
  if (got != std::string(magic, n))
    throw FormatError("bad magic in " + what + ": expected '" +
                      std::string(magic, n) + "'");
}

}  // namespace stream_adapt::bin
