#pragma once

#include <stdexcept>
#include <string>

namespace dfbsde {

/// Invalid configuration or mismatched dimensions supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse (e.g. backward from a non-scalar node, empty ensemble).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Singular or ill-conditioned linear algebra, or a value outside a function's domain.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state or value estimate became non-finite while integrating.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, int step)
      : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Checkpoint I/O failure. `shape_mismatch()` distinguishes a config/checkpoint
/// dimension conflict from an unreadable or corrupt file.
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, bool shape_mismatch = false)
      : std::runtime_error(what), shape_mismatch_(shape_mismatch) {}

  bool shape_mismatch() const noexcept { return shape_mismatch_; }

 private:
  bool shape_mismatch_;
};

}  // namespace dfbsde
