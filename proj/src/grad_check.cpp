#include "liedecomp/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace liedecomp {

GradCheckReport grad_check(const DifferentiableScalar& f, const Eigen::ArrayXd& point,
                           double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: step h must be positive");

  GradCheckReport report;
  const Eigen::ArrayXd analytic = f.gradient(point);
  if (analytic.size() != point.size())
    throw std::invalid_argument("grad_check: gradient size does not match point");

  report.coords.resize(static_cast<std::size_t>(point.size()));
  Eigen::ArrayXd probe = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    GradCheckCoord& c = report.coords[static_cast<std::size_t>(i)];
    c.analytic = analytic[i];

    probe[i] = point[i] + h;
    const double fp = f.value(probe);
    probe[i] = point[i] - h;
    const double fm = f.value(probe);
    probe[i] = point[i];

    c.finite = std::isfinite(fp) && std::isfinite(fm);
    if (!c.finite) {
      report.all_finite = false;
      c.rel_error = std::numeric_limits<double>::infinity();
      report.max_rel_error = std::numeric_limits<double>::infinity();
      continue;
    }
    c.numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(c.analytic), std::abs(c.numeric), 1e-8});
    c.rel_error = std::abs(c.analytic - c.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
  }
  return report;
}

}  // namespace liedecomp
