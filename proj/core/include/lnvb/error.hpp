#pragma once

#include <stdexcept>
#include <string>

namespace lnvb {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (log K of a
/// non-positive argument, invalid GIG parameters, nonexistent moments).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid model (dimension mismatch, isolated SAR node,
/// t-Student noise on a continuous-space component, ...).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files or configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An iterative numerical procedure failed (Newton divergence, grid weights
/// underflowing, mass not locatable).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Sparse Cholesky factorization failed even after jitter escalation.
class FactorizationError : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

}  // namespace lnvb
