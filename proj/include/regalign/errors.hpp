#pragma once

#include <stdexcept>
#include <string>

namespace regalign {

// Shape or size disagreement between inputs.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// No valid pixels remain; the optimization state carries no information.
class DivergedState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateRotation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasiblePose : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace regalign
