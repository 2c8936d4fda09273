#pragma once

#include <stdexcept>
#include <string>

namespace maeloc {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A signal without usable energy (all-zero frame, zero-power input).
class DegenerateSignal : public Error {
 public:
  using Error::Error;
};

/// Coincident source and receiver, or otherwise singular geometry.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class OutOfRoom : public Error {
 public:
  using Error::Error;
};

class InsufficientMeasurements : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A tensor operation produced NaN or infinity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when training produces a non-finite loss.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace maeloc
