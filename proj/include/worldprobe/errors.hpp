#pragma once

#include <stdexcept>
#include <string>

namespace worldprobe {

// Base class for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (bad files, schema violations,
// dimension mismatches). CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

// Rank deficiency, divergence, degenerate leverage. CLI exit code 4.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid flag combinations and argument values. CLI exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace worldprobe
