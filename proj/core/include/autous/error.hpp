// Copyright 2026 The autous Authors. All Rights Reserved.
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

namespace autous {

/// Broad failure classes. The CLI maps them to exit codes and the HTTP
/// service maps them to status codes, so every thrown error carries one.
enum class ErrorKind {
  kValidation,
  kConfig,
  kDecode,
  kIo,
  kNotFound,
  kConflict,
  kTransition,
  kTimeout,
  kBackendUnavailable,
  kMalformedOutput,
  kDivergence,
  kInternal,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string detail = {})
      : std::runtime_error(message), kind_(kind), detail_(std::move(detail)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kValidation, m, std::move(d)) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kConfig, m, std::move(d)) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kDecode, m, std::move(d)) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kIo, m, std::move(d)) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kNotFound, m, std::move(d)) {}
};

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kConflict, m, std::move(d)) {}
};

class TransitionError : public Error {
 public:
  explicit TransitionError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kTransition, m, std::move(d)) {}
};

class TimeoutError : public Error {
 public:
  explicit TimeoutError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kTimeout, m, std::move(d)) {}
};

class BackendUnavailableError : public Error {
 public:
  explicit BackendUnavailableError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kBackendUnavailable, m, std::move(d)) {}
};

/// Carries the raw model text in detail() so callers can show it for review.
class MalformedOutputError : public Error {
 public:
  MalformedOutputError(const std::string& m, std::string raw)
      : Error(ErrorKind::kMalformedOutput, m, std::move(raw)) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kDivergence, m, std::move(d)) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& m, std::string d = {})
      : Error(ErrorKind::kInternal, m, std::move(d)) {}
};

}  // namespace autous
