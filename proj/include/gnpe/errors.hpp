#pragma once

#include <stdexcept>
#include <string>

namespace gnpe {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor/matrix shapes.
struct DimensionError : Error {
  using Error::Error;
};

// NaN/Inf or domain violation (log of non-positive, out-of-box theta, ...).
struct NumericError : Error {
  using Error::Error;
};

// Invalid configuration values (N < 2, bad bounds, ...).
struct ConfigError : Error {
  using Error::Error;
};

// API misuse: fingerprint mismatch, non-scalar loss, ...
struct UsageError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Numeric divergence during training.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace gnpe
