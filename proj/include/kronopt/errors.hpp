#pragma once

#include <stdexcept>
#include <string>

namespace kronopt {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : Error {
  using Error::Error;
};
struct NotSymmetric : Error {
  using Error::Error;
};
struct RankDeficient : Error {
  using Error::Error;
};
struct SingularPower : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct DegenerateScale : Error {
  using Error::Error;
};
struct NoConvergence : Error {
  using Error::Error;
};
struct UnsupportedShape : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct EmptyGrid : Error {
  using Error::Error;
};

}  // namespace kronopt
