#pragma once

#include <stdexcept>
#include <string>

namespace clb {

/// Tensor shapes that do not line up for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf reached a value or gradient buffer.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected argument outside a shape problem (bad temperature, empty mask, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace clb
