#pragma once

#include <functional>
#include <string>
#include <vector>

#include "odekit/autodiff.hpp"

namespace odekit::ad {

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  // per-parameter (name, max relative error)
  std::vector<std::pair<std::string, double>> per_param;
};

// Compares analytic gradients against central finite differences.
//
// loss_fn must be a deterministic scalar function of the current parameter
// values. When compute_grads is true it must run backward and leave the
// analytic gradients in each parameter's grad buffer; when false it only
// returns the loss value.
//
// Relative error is |a - n| / max(|a|, |n|, 1e-4); the absolute floor keeps
// finite-difference noise on (near-)zero gradients from registering as a
// large relative error. Non-finite analytic gradients always fail.
GradCheckReport gradcheck(const std::function<double(bool compute_grads)>& loss_fn,
                          const std::vector<Tensor*>& params, double step, double tolerance);

}  // namespace odekit::ad
