#pragma once

#include <stdexcept>
#include <string>

namespace missmod {

// All library failures derive from Error so callers (the CLI, the Python
// bindings) can map them to exit codes / exceptions in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class VocabError : public InputError {
 public:
  using InputError::InputError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

class InventoryError : public Error {
 public:
  using Error::Error;
};

class PatternError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace missmod
