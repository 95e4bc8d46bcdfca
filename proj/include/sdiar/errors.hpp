// Copyright 2026 The sdiar Authors
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

#pragma once

#include <stdexcept>
#include <string>

namespace sdiar {

/// Base class for all recoverable sdiar errors. CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class SingularCovariance : public Error {
 public:
  explicit SingularCovariance(const std::string& msg) : Error(msg) {}
};

class ChannelMismatch : public Error {
 public:
  explicit ChannelMismatch(const std::string& msg) : Error(msg) {}
};

class AudioTooShort : public Error {
 public:
  explicit AudioTooShort(const std::string& msg) : Error(msg) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

class LengthMismatch : public Error {
 public:
  explicit LengthMismatch(const std::string& msg) : Error(msg) {}
};

class ZeroVector : public Error {
 public:
  explicit ZeroVector(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

class DirectionCollision : public Error {
 public:
  explicit DirectionCollision(const std::string& msg) : Error(msg) {}
};

class UnsupportedFormat : public Error {
 public:
  explicit UnsupportedFormat(const std::string& msg) : Error(msg) {}
};

class CorruptHeader : public Error {
 public:
  explicit CorruptHeader(const std::string& msg) : Error(msg) {}
};

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& msg) : Error(msg) {}
};

}  // namespace sdiar
