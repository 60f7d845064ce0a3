#pragma once

#include <stdexcept>
#include <string>

namespace frdesign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation (non-finite, non-positive, wrong family).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// An iterative routine ran out of its iteration budget.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Every particle weight vanished after reweighting.
class DegenerateUpdate : public Error {
 public:
  DegenerateUpdate(const std::string& what, double max_log_lik, int particles)
      : Error(what), max_log_lik_(max_log_lik), particles_(particles) {}
  double max_log_lik() const { return max_log_lik_; }
  int particles() const { return particles_; }

 private:
  double max_log_lik_;
  int particles_;
};

/// Laplace mode search failed from every start.
class FitFailure : public Error {
 public:
  using Error::Error;
};

/// Too many Monte Carlo draws were discarded to trust an estimate.
class UnreliableEstimate : public Error {
 public:
  using Error::Error;
};

/// Malformed user input (observation out of range, bad config value).
/// `path` is a JSON pointer into the offending document when known.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::string path = {})
      : Error(what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Operation not allowed in the current session status.
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace frdesign
