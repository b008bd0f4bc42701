// Copyright 2026 The transvw Authors.
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

namespace tvw {

// Every failure raised by the library derives from Error so callers can map
// categories onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, hyperparameters or topologies.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// API misuse: bad arguments, double backward, out-of-range indices.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Digest mismatches, truncated or malformed payloads.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace tvw
