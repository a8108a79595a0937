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

#include <stdexcept>
#include <string>

namespace stream_adapt {

// Base of everything the toolkit throws. The CLI maps ConfigError to exit
// code 2 and every other Error to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class TooShortError : public Error {
 public:
  using Error::Error;
};

class MissingSpeakerError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// File format problems. Subclasses let callers tell a bad magic apart from a
// truncated file or a checksum failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A pipeline stage failed; carries the stage name and the checksums of the
// artifacts it consumed.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string trail, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what +
              (trail.empty() ? "" : " [upstream: " + trail + "]")),
        stage_(std::move(stage)),
        trail_(std::move(trail)) {}

  const std::string& stage() const { return stage_; }
  const std::string& trail() const { return trail_; }

 private:
  std::string stage_;
  std::string trail_;
};

}  // namespace stream_adapt
