#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace divo {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent dimensions, bad hyperparameters, unknown ids or keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation called in a state that forbids it (double normalization,
// stepping a finished episode, sampling an empty dataset).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Step index or similar outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by a network or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or loss during optimization.
class TrainingDivergence : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed binary file. Carries the byte offset where reading failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace divo
