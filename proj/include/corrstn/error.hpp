#pragma once

#include <stdexcept>
#include <string>

namespace corrstn {

// Shape or length disagreement between inputs.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Partition boundaries that are not strictly increasing or do not cover the data.
class PartitionError : public std::invalid_argument {
 public:
  explicit PartitionError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid configuration value (top-U out of range, d_model % heads != 0, ...).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or inconsistent dataset files.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Index arithmetic reaching outside the available history.
class RangeError : public std::out_of_range {
 public:
  explicit RangeError(const std::string& what) : std::out_of_range(what) {}
};

// Numerical failure during training or evaluation (NaN loss, empty sets).
class ComputeError : public std::runtime_error {
 public:
  explicit ComputeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace corrstn
