// Copyright 2026 The segshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace segshift {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a domain invariant (label outside the label space,
/// non-finite weights, shape mismatch).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A metric has no defined value for the given input (e.g. AUROC with a
/// single class present).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// A dataset on disk is missing, truncated, or malformed. Carries the id of
/// the offending sample when one is known.
class DatasetError : public Error {
 public:
  DatasetError(std::string sample_id, const std::string& what)
      : Error(sample_id.empty() ? what : "sample '" + sample_id + "': " + what),
        sample_id_(std::move(sample_id)) {}

  const std::string& sample_id() const noexcept { return sample_id_; }

 private:
  std::string sample_id_;
};

/// Training produced a non-finite objective.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace segshift
