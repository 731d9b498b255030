#pragma once

#include <stdexcept>
#include <string>

namespace p2s {

// Exception families map one-to-one onto CLI exit codes (see tools/p2s.cpp).

/// Malformed or out-of-range configuration. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad, missing, or mismatched input data. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a numeric invariant broken mid-computation. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace p2s
