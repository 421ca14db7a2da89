#pragma once

#include <stdexcept>
#include <string>

namespace hem {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Operation invoked on an object in the wrong state (e.g. sampling an empty buffer).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hem
