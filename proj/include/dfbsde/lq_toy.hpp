#pragma once

// One-dimensional double integrator: state [position, velocity], force input.

#include <array>
#include <string>
#include <vector>

#include "dfbsde/dynamics.hpp"

namespace dfbsde::dyn {

struct LqToyParams {
  double sigma = 0.1;  // diffusion = sigma * G
};

class LqToy {
 public:
  static constexpr int kStateDim = 2;
  static constexpr int kControlDim = 1;
  static constexpr int kNoiseDim = 1;

  LqToy() = default;
  explicit LqToy(LqToyParams p) : p_(p) {}

  const LqToyParams& params() const { return p_; }

  template <class T>
  SdeTerms<T, 2, 1, 1> terms(const std::array<T, 2>& x) const {
    SdeTerms<T, 2, 1, 1> t;
    t.drift = {x[1], T(0.0)};
    t.control = {T(0.0), T(1.0)};
    t.diffusion = {T(0.0), T(p_.sigma)};
    return t;
  }

  std::vector<std::string> state_names() const { return {"p", "v"}; }
  std::vector<std::string> control_names() const { return {"force"}; }

 private:
  LqToyParams p_;
};

}  // namespace dfbsde::dyn
