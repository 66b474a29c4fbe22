/* Copyright 2026 The anchordistill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <stdexcept>
#include <string>

namespace ad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation needs.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A scalar argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input data violates a documented precondition (labels, distributions).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Incompatible student/teacher or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or corrupt on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or divergence during training.
class NumericAbort : public Error {
 public:
  NumericAbort(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace ad
