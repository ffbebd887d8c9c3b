#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace liedecomp {

/// A scalar function of a flat parameter vector together with its
/// reverse-mode gradient (typically: rebuild the tape at the point and
/// run backward()).
struct DifferentiableScalar {
  std::function<double(const Eigen::ArrayXd&)> value;
  std::function<Eigen::ArrayXd(const Eigen::ArrayXd&)> gradient;
};

struct GradCheckCoord {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool all_finite = true;
  std::vector<GradCheckCoord> coords;
};

/// Central-difference check: per coordinate, compare backward() against
/// (f(p+h) - f(p-h)) / 2h with relative error denominator
/// max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const DifferentiableScalar& f, const Eigen::ArrayXd& point, double h);

}  // namespace liedecomp
