#pragma once

#include <stdexcept>
#include <string>

namespace rgvq {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside an operation's mathematical domain (e.g. log of a non-positive value).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Invalid hyperparameter (temperature, thresholds, sample counts).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated precondition of an API call (empty codebook, non-scalar loss, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable or inconsistent experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rgvq
