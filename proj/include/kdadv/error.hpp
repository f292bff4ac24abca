#pragma once

#include <stdexcept>
#include <string>

namespace kdadv {

// Base for every error the library raises deliberately.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shapes, ranges).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint, report or archive file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint architecture hash does not match the requested architecture.
class ArchitectureMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

// Missing or truncated dataset files.
class IngestionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage needs an artifact an earlier stage did not produce.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace kdadv
