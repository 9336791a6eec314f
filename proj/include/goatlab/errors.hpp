#pragma once

#include <stdexcept>

namespace goatlab {

// Shape mismatch between operands (reports both shapes in the message).
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure: non-finite values, iteration caps, divergence.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API contract (e.g. reusing a stale routing result).
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A training or experiment run failed mid-way.
class run_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration file or CLI usage.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace goatlab
