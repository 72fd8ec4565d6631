#pragma once

#include <stdexcept>
#include <string>

namespace perisk {

// Base class for all toolkit errors. CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed user input: files, formulas, records, matrices.
struct SchemaError : Error {
  using Error::Error;
};

// Structurally valid input with out-of-range or inconsistent values.
struct ArgumentError : Error {
  using Error::Error;
};

// Hyperparameter outside its documented domain.
struct ParameterError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Temporal operator window extends past the end of the trace.
struct HorizonError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Scaled predicate margin left [-1, 1] under the normalized-margin metric.
struct NormalizationError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Metric has no defined value on the given data (e.g. single-class AUC).
struct UndefinedMetricError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Zero failure mass: the ideal proposal does not exist.
struct UndefinedProposalError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Optimization produced a non-finite loss.
struct TrainingError : Error {
  explicit TrainingError(const std::string& what, long epoch = -1)
      : Error(what), epoch(epoch) {}
  long epoch;
};

// No sample met the stage threshold.
struct StallError : Error {
  using Error::Error;
};

// Request exceeds a hard resource bound (reported, never attempted).
struct CapabilityError : Error {
  using Error::Error;
};

}  // namespace perisk
