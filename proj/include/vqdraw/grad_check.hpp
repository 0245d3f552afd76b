#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "vqdraw/tensor.hpp"

namespace vqdraw {

struct GradCheckReport {
  double max_rel_error = 0.0;
  long checked = 0;
  long excluded = 0;  // coordinates flagged unreliable (relu kinks etc.)
  int worst_param = -1;
  long worst_elem = -1;
  bool passed = false;
  // coordinates where a perturbed evaluation went non-finite
  std::vector<std::pair<int, long>> non_finite;
};

// Compares analytic gradients of f (a scalar built from `params`, re-evaluated
// per call) against central finite differences, coordinate by coordinate.
// Coordinates whose one-sided differences disagree are excluded: for smooth f
// they agree to O(h), across a relu kink they differ by the slope jump.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params,
                                  double fd_step = 1e-5, double tol = 1e-6) {
  GradCheckReport report;

  Tensor<double> loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.numel(), 0.0));
    p.zero_grad();
  }

  NoGradGuard ng;
  auto eval_at = [&](int pi, long ei, double value) {
    double& slot = params[pi].data()[ei];
    const double saved = slot;
    slot = value;
    const double out = f().value();
    slot = saved;
    return out;
  };

  const double f0 = f().value();
  if (!std::isfinite(f0)) {
    report.non_finite.emplace_back(-1, -1);
    return report;
  }

  for (int pi = 0; pi < (int)params.size(); ++pi) {
    for (long ei = 0; ei < params[pi].numel(); ++ei) {
      const double x0 = params[pi].values()[ei];
      const double fp = eval_at(pi, ei, x0 + fd_step);
      const double fm = eval_at(pi, ei, x0 - fd_step);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.non_finite.emplace_back(pi, ei);
        continue;
      }
      const double d_fwd = (fp - f0) / fd_step;
      const double d_bwd = (f0 - fm) / fd_step;
      const double d1 = (fp - fm) / (2 * fd_step);
      const double dscale = std::max(std::fabs(d_fwd), std::fabs(d_bwd));
      if (std::fabs(d_fwd - d_bwd) > std::max(1e-3 * dscale, 1e-4)) {
        ++report.excluded;
        continue;
      }
      const double a = analytic[pi][ei];
      const double denom = std::max({std::fabs(a), std::fabs(d1), 1e-3});
      const double err = std::fabs(a - d1) / denom;
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_elem = ei;
      }
    }
  }
  report.passed = report.non_finite.empty() && report.checked > 0 &&
                  report.max_rel_error < tol;
  return report;
}

}  // namespace vqdraw
