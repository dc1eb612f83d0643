#pragma once

#include <stdexcept>
#include <string>

namespace gad {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input errors (CLI exit code 1).
class ParseError : public Error { using Error::Error; };
class SchemaError : public Error { using Error::Error; };
class InvariantError : public Error { using Error::Error; };
class MissingPrediction : public Error { using Error::Error; };
class InfeasibleSpec : public Error { using Error::Error; };

// Shape and domain errors.
class ShapeError : public Error { using Error::Error; };
class DimError : public Error { using Error::Error; };
class FrameMismatch : public Error { using Error::Error; };
class DegenerateHull : public Error { using Error::Error; };
class NoCounterpart : public Error { using Error::Error; };
class AllMaskedRow : public Error { using Error::Error; };
class NonScalarLoss : public Error { using Error::Error; };

// Numerical failure (CLI exit code 2).
class DivergenceError : public Error { using Error::Error; };

}  // namespace gad
