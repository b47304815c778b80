// Copyright 2026 The privdistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PRIVDISTILL_ERROR_HPP_
#define PRIVDISTILL_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace privdistill {

// Invalid configuration or input that can be rejected before any work is
// done. The CLI maps these to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between vectors, models, cohorts or files.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed on-disk document (CSV row, JSON manifest, checkpoint).
class ParseError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Failure while running: non-finite losses, degenerate embeddings, numeric
// breakdowns. The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class NumericError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

inline void CheckDim(long actual, long expected, const std::string& what) {
  if (actual != expected) {
    throw DimensionError(what + ": expected dimension " +
                         std::to_string(expected) + ", got " +
                         std::to_string(actual));
  }
}

}  // namespace privdistill

#endif  // PRIVDISTILL_ERROR_HPP_
