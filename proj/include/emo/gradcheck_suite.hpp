#pragma once

#include <string>
#include <vector>

namespace emo {

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline constexpr double kGradcheckTolerance = 1e-5;

/// Finite-difference check of every differentiable op, both model branches
/// and both losses at fixed random points.
std::vector<GradcheckRow> run_gradcheck_suite(double tolerance = kGradcheckTolerance);

}  // namespace emo
