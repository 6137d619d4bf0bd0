#pragma once

#include <stdexcept>
#include <string>

namespace acegfn {

// Every failure the library raises derives from Error so callers can catch
// one type at the orchestration layer.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedEnvironment : public Error {
 public:
  using Error::Error;
};

class UnreachableState : public Error {
 public:
  using Error::Error;
};

class InvalidTrajectory : public Error {
 public:
  using Error::Error;
};

class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

class EmptyActionSet : public Error {
 public:
  using Error::Error;
};

// Raised when a primitive produces a non-finite value, or an optimizer step
// receives a non-finite gradient. `primitive()` names the offending op.
class NumericalFailure : public Error {
 public:
  NumericalFailure(std::string primitive, const std::string& what)
      : Error(what), primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

class InvalidBatch : public Error {
 public:
  using Error::Error;
};

class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

class InvalidMeasure : public Error {
 public:
  using Error::Error;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace acegfn
