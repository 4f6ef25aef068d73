#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace llae {

/// Raised when a caller violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by file readers. `offset()` is the byte offset (binary formats) or
/// 1-based line number (text formats) where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Conditioning on evidence whose probability is zero.
class ZeroEvidenceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A structure operation that does not apply to the requested target.
class RejectedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical failure during training (non-finite loss, divergence).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A compressed symbolic code that names no category.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace llae
