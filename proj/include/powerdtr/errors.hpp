#pragma once

#include <stdexcept>
#include <string>

namespace powerdtr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched grids, action sets or dimensions.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A Q-value, feature or loss evaluated to a non-finite number.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// A data record violates its invariants (e.g. nonpositive propensity).
class InvalidRecordError : public Error {
 public:
  using Error::Error;
};

/// A power index sits at a singular value of the requested family.
class SingularIndexError : public Error {
 public:
  using Error::Error;
};

/// An instance is degenerate for the requested computation (ties, unobserved actions).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A divergence came out clearly negative: a numerical bug, never clamped.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace powerdtr
