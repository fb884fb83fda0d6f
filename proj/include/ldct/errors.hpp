#pragma once

#include <stdexcept>
#include <string>

namespace ldct {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array shapes that must agree do not.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A parameter or configuration value is outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked on an object that cannot serve it
/// (wrong network head, unfrozen task model, empty mask, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Volume ingestion failed (e.g. a volume without its segmentation).
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Persisted data does not match its manifest.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ldct
