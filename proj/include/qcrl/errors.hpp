#pragma once

#include <stdexcept>
#include <string>

namespace qcrl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or mismatched operator/state dimensions.
struct DimensionError : Error {
  using Error::Error;
};

// A caller broke a documented precondition (e.g. non-Hermitian propagator input).
struct ContractViolation : Error {
  using Error::Error;
};

// Zero-norm state passed to normalize().
struct DegenerateStateError : Error {
  using Error::Error;
};

// Target state support does not fit the requested truncation.
struct TruncationError : Error {
  using Error::Error;
};

// Config file load/validation failure; message carries file:line.
struct ConfigError : Error {
  using Error::Error;
};

// Training aborted (NaN loss, shape mismatch mid-run).
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace qcrl
