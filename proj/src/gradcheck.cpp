#include "odekit/gradcheck.hpp"

#include <cmath>

namespace odekit::ad {

GradCheckReport gradcheck(const std::function<double(bool compute_grads)>& loss_fn,
                          const std::vector<Tensor*>& params, double step, double tolerance) {
  for (Tensor* p : params) p->zero_grad();
  (void)loss_fn(true);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  GradCheckReport report;
  report.pass = true;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    double worst = 0.0;
    for (size_t i = 0; i < p->data.size(); ++i) {
      double a = analytic[pi][i];
      if (!std::isfinite(a)) {
        worst = std::numeric_limits<double>::infinity();
        break;
      }
      double saved = p->data[i];
      p->data[i] = saved + step;
      double up = loss_fn(false);
      p->data[i] = saved - step;
      double down = loss_fn(false);
      p->data[i] = saved;
      double numeric = (up - down) / (2.0 * step);
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      worst = std::max(worst, rel);
    }
    report.per_param.emplace_back(p->name.empty() ? "param" + std::to_string(pi) : p->name, worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
    if (!(worst <= tolerance)) report.pass = false;
  }
  return report;
}

}  // namespace odekit::ad
