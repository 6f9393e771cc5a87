#pragma once

#include <stdexcept>
#include <string>

namespace scalecbf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad sizes, orders, non-positive parameters, malformed primitives.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Point sets or parameter sets that cannot define the requested object.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// An iterative solver gave up. Carries the last residual it reached.
class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, double residual)
      : Error(what + " (last residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A linear system that should be nonsingular under the theory was not.
class SingularSystem : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace scalecbf
