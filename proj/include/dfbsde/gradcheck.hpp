#pragma once

// Central finite-difference checks of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dfbsde/autodiff.hpp"

namespace dfbsde::check {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  bool passed() const { return failures == 0; }
};

struct GradCheckOptions {
  double step = 1e-6;
  double rel_tol = 1e-5;
  double abs_floor = 1e-8;
  /// Test hook: perturbs the analytic gradient of the first entry before
  /// comparison, so a broken backward pass can be simulated.
  bool corrupt = false;
};

/// `loss(tape)` must rebuild the graph from the current store values and return
/// a scalar root. Every parameter entry is perturbed by +-step and the tape
/// gradient is compared with the central difference. An entry passes when
/// |ad - fd| <= abs_floor or |ad - fd| <= rel_tol * max(|ad|, |fd|).
inline GradCheckResult finite_difference_check(const std::string& name, ad::ParamStore& store,
                                               const std::function<ad::Var(ad::Tape&)>& loss,
                                               const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;
  ad::Tape tape;
  ad::Var root = loss(tape);
  ad::Gradients grads = tape.backward(root, store);
  if (opt.corrupt && !grads.empty() && grads[0].size() > 0) grads[0](0, 0) += 1.0;

  for (int p = 0; p < store.size(); ++p) {
    auto& value = store.value(p);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double orig = value.data()[i];
      value.data()[i] = orig + opt.step;
      ad::Tape tp;
      const double fp = tp.scalar(loss(tp));
      value.data()[i] = orig - opt.step;
      ad::Tape tm;
      const double fm = tm.scalar(loss(tm));
      value.data()[i] = orig;

      const double fd = (fp - fm) / (2.0 * opt.step);
      const double g = grads[static_cast<std::size_t>(p)].data()[i];
      const double abs_err = std::abs(g - fd);
      const double scale = std::max(std::abs(g), std::abs(fd));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      res.checked += 1;
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      const bool ok = abs_err <= opt.abs_floor || abs_err <= opt.rel_tol * scale;
      if (!ok || !std::isfinite(g)) res.failures += 1;
      if (abs_err > opt.abs_floor) res.max_rel_error = std::max(res.max_rel_error, rel_err);
    }
  }
  return res;
}

}  // namespace dfbsde::check
