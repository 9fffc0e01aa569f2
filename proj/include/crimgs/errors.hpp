#pragma once

#include <stdexcept>
#include <string>

namespace crimgs {

/// Tensor operands whose extents do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad input files, manifests, poses or images.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, divergence, or a solver that ran out of steps.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The ODE integrator exceeded its step budget before reaching the last
/// requested time.
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, double last_time)
      : NumericalError(what + " (reached t=" + std::to_string(last_time) + ")"),
        last_time_(last_time) {}

  [[nodiscard]] double last_time() const noexcept { return last_time_; }

 private:
  double last_time_;
};

/// Invalid configuration keys or values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace crimgs
