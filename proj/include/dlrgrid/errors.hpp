#pragma once

#include <stdexcept>
#include <string>

namespace dlrgrid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// netgraph
class DisconnectedNetwork : public Error {
 public:
  using Error::Error;
};
class SelfLoop : public Error {
 public:
  using Error::Error;
};
class UnknownBus : public Error {
 public:
  using Error::Error;
};

// autodiff
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class NonScalarLoss : public Error {
 public:
  using Error::Error;
};
class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

// forecaster / metrics
class MissingData : public Error {
 public:
  using Error::Error;
};
class LevelOutOfRange : public Error {
 public:
  using Error::Error;
};
class ZeroNormalizer : public Error {
 public:
  using Error::Error;
};
class EmptyCosts : public Error {
 public:
  using Error::Error;
};

// gridops. Infeasibility maps to CLI exit code 2.
class Infeasible : public Error {
 public:
  using Error::Error;
};
class IterationLimit : public Error {
 public:
  using Error::Error;
};

// pipeline
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace dlrgrid
