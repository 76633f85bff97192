#pragma once

#include <stdexcept>
#include <string>

namespace mts2s {

// Shape disagreement between operands; the message names both shapes.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside an operation's domain (empty softmax input, dropout rate >= 1, ...).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented protocol (wrong task kind, cache/batch mismatch,
// non-deterministic loss under gradcheck, ...).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged or a numerical certification failed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mts2s
