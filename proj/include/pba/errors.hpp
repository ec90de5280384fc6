#pragma once

#include <stdexcept>
#include <string>

namespace pba {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A point lies at or behind the camera plane (|z| below epsilon).
struct DegenerateDepth : Error {
  explicit DegenerateDepth(const std::string& what = "degenerate depth")
      : Error(what) {}
};

/// An inverse depth became non-positive.
struct InvalidDepth : Error {
  explicit InvalidDepth(const std::string& what = "non-positive inverse depth")
      : Error(what) {}
};

/// A sample location fell outside the valid image area.
struct OutOfBounds : Error {
  explicit OutOfBounds(const std::string& what = "sample out of bounds")
      : Error(what) {}
};

/// No residual of the problem is in bounds.
struct EmptyProblem : Error {
  explicit EmptyProblem(const std::string& what = "no in-bounds residuals")
      : Error(what) {}
};

/// A scene configuration cannot satisfy its visibility constraints.
struct SpecInfeasible : Error {
  explicit SpecInfeasible(const std::string& what) : Error(what) {}
};

}  // namespace pba
