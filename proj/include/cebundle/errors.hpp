#pragma once

#include <stdexcept>
#include <string>

namespace cebundle {

// Invalid configuration (bad dimensions, inconsistent flags).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's domain.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Index or length past a fixed bound.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Enumeration too large for an exhaustive oracle.
struct SizeError : std::length_error {
  using std::length_error::length_error;
};

// Mode or bundle shape that an objective does not define.
struct UnsupportedError : std::domain_error {
  using std::domain_error::domain_error;
};

// Non-finite values reached the optimizer.
struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cebundle
