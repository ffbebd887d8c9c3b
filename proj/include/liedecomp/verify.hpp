#pragma once

#include <functional>
#include <string>
#include <vector>

#include "liedecomp/affine.hpp"

namespace liedecomp {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Flow integrator hook; the default is integrate_flow. Tests inject a
/// corrupted integrator to confirm the suite catches broken group laws.
using FlowIntegrator = std::function<AffineMap(const FlowParams&, double)>;

/// Fixed-step RK4 reference for the flow map (the independent oracle the
/// closed-form exponential is checked against).
AffineMap rk4_flow(const FlowParams& params, double lambda, int steps);

/// Runs the property suite; `filter` keeps properties whose name contains
/// the substring (empty runs everything).
std::vector<PropertyResult> run_verification(const std::string& filter = "",
                                             FlowIntegrator integrator = {});

}  // namespace liedecomp
