#pragma once

#include <functional>

#include "emo/autodiff.hpp"

namespace emo::ad {

/// A scalar-valued function recorded on the supplied tape.
using ScalarFunction = std::function<Tensor(Tape&, const Tensor&)>;

/// Worst relative error between reverse-mode and central-difference gradients
/// of f at x. The denominator per coordinate is max(|analytic|, |numeric|, 1e-8).
/// Throws RangeError for eps outside [1e-7, 1e-3], ContractError when f is not scalar.
double grad_check(const ScalarFunction& f, const Matrix& x, double eps = 1e-6);

/// Central-difference gradient of f at x (the oracle side of grad_check).
Matrix numeric_gradient(const ScalarFunction& f, const Matrix& x, double eps);

}  // namespace emo::ad
