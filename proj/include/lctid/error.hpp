// Copyright 2026 The lctid Authors. All Rights Reserved.
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
// ==============================================================================

#pragma once

#include <stdexcept>
#include <string>

namespace lctid {

// Root of every error the library throws. Callers that only care about
// "something went wrong in lctid" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: malformed manifest rows, unsupported audio, empty inputs.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Tensor or feature-matrix dimensions that do not compose.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A model file that cannot be parsed: bad magic, truncated payload.
class CorruptFile : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatch : public IoError {
 public:
  using IoError::IoError;
};

// Training produced a non-finite loss.
class Diverged : public Error {
 public:
  using Error::Error;
};

}  // namespace lctid
