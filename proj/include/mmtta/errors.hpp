#pragma once

#include <stdexcept>
#include <string>

namespace mmtta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a precondition (shape mismatch, out-of-range argument).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be processed (non-finite coordinate, zero-norm feature).
class RejectedInput : public Error {
 public:
  using Error::Error;
};

/// A batch whose responsibilities fail their row invariant.
class RejectedBatch : public Error {
 public:
  using Error::Error;
};

/// Covariance could not be factorized even after shrinkage retries, or a loss went non-finite.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int class_index = -1)
      : Error(what), class_index_(class_index) {}
  int class_index() const noexcept { return class_index_; }

 private:
  int class_index_;
};

/// Invalid configuration or scenario; `field()` names the offending key.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmtta
