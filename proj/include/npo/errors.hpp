// Copyright 2026 The npo-unlearn Authors. All Rights Reserved.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace npo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad sizes, missing datasets, out-of-range weights.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input to a scalar primitive.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatch between vectors, matrices or models.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// An optimization run produced a non-finite loss or parameter.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A rate fit could not be computed (degenerate or too-short input).
class FitError : public Error {
 public:
  using Error::Error;
};

/// A numerical consequence of the divergence-speed analysis failed to hold.
class TheoryViolation : public Error {
 public:
  using Error::Error;
};

/// Every grid cell of a hyper-parameter search failed.
class ExhaustionError : public Error {
 public:
  using Error::Error;
};

/// File system failure while reading or writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant broken; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace npo
