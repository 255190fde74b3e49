/*
 * Copyright 2026 The bdpgan Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef BDPGAN_ERROR_HPP_
#define BDPGAN_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdpgan {

// Process exit codes used by the command line driver.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kPrivacyCeiling = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Invalid parameters, bad config files, unsupported combinations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(what, ExitCode::kConfig) {}
};

// Shape or dimension mismatch between tensors / networks.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

// Malformed binary or text input. Carries the byte (or line) offset.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")",
              ExitCode::kConfig),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// NaN/Inf showed up where a finite value is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(what, ExitCode::kDivergence) {}
};

class PrivacyCeilingError : public Error {
 public:
  explicit PrivacyCeilingError(const std::string& what)
      : Error(what, ExitCode::kPrivacyCeiling) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace bdpgan

#endif  // BDPGAN_ERROR_HPP_
