#pragma once

#include <stdexcept>
#include <string>

namespace malab {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside an operation's mathematical domain (empty tensor, T = 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// NaN or infinity encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model, training, or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: non-scalar loss, masked position in a concentration set, ...
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user-supplied data (token id out of range, ...).
class InputError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Corrupt or incompatible file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace malab
