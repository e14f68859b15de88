#pragma once

#include <stdexcept>
#include <string>

namespace panelbc {

// Error taxonomy. The CLI maps each class onto a distinct exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable input: bad CSV, duplicate keys, unknown names.
class InputError : public Error {
 public:
  using Error::Error;
};

// Data that is well formed but cannot identify the model: no outcome
// variation, dummy-collinear covariates, disconnected panels, empty subpanels.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Iterative procedure stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Binary-outcome fit whose index diverges.
class SeparationError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

}  // namespace panelbc
