#pragma once

#include <stdexcept>
#include <string>

namespace permfl {

/// Broad failure classes. Each maps onto one CLI exit code.
enum class ErrorCategory {
  Config,       // bad configuration, dimension mismatch, infeasible partition
  Numeric,      // non-finite or divergent iterate
  Io,           // file system / network / malformed input file
  Unsupported,  // operation the chosen model cannot perform
  Evaluation,   // metrics requested on unusable state
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

/// Malformed binary input (IDX). Carries the byte offset where parsing failed.
class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class PartitionError : public ConfigError {
 public:
  explicit PartitionError(const std::string& what) : ConfigError(what) {}
};

class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& what) : Error(ErrorCategory::Unsupported, what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error(ErrorCategory::Evaluation, what) {}
};

/// Process exit code for a category: 2 config, 3 numeric, 4 I/O.
int exit_code(ErrorCategory category) noexcept;

}  // namespace permfl
