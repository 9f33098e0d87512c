#pragma once

#include <stdexcept>
#include <string>

namespace vcshot {

// Base of every error raised by the library. Callers that only care about
// "something was wrong with the input" can catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied value violates a documented precondition (bad flag,
// out-of-range threshold, V larger than the pool, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Two objects that must agree on H, W, V or C do not.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Not enough data to honour the request (too few vectors for V clusters,
// too few images per category for K + Q).
class InsufficientData : public Error {
 public:
  using Error::Error;
};

// A computation produced a non-finite value. Never clamped away.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vcshot
