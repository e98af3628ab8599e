#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace arblab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Orthonormalization hit a (numerically) dependent column.
class RankError : public Error {
 public:
  using Error::Error;
};

/// A request that cannot be satisfied by the data or parameters supplied.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Weight or mean vectors that make a geometry metric undefined.
class DegenerateWeights : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, int epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Invalid experiment configuration. `field()` names the offending key, e.g. "optim.lr".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace arblab
