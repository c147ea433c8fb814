#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the op. The message names the op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An op produced NaN or Inf, or a loss turned non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Two parameter/gradient collections do not line up entry by entry.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the model vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Invalid language / corpus generation parameters.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Not enough data for a request (batch larger than pool, empty split).
class SetupError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration. Carries the offending keys in the message.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Persisted data failed checksum or length validation.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Runs that cannot be compared (different evaluation splits).
class ComparabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtl
