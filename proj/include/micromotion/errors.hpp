#pragma once

#include <stdexcept>
#include <string>

namespace micromotion {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the supported domain of a special function or model.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not reach its accuracy target.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or scan plan.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unusable data (empty histograms, missing columns, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// The normal matrix of a converged fit is singular.
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

/// No usable starting point could be derived from the data.
class InitializationError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace micromotion
