#include "emo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "emo/errors.hpp"

namespace emo::ad {

namespace {

double evaluate(const ScalarFunction& f, const Matrix& x) {
  Tape tape;
  const Tensor out = f(tape, tape.constant(x));
  if (!out.is_scalar()) throw ContractError("grad_check: function output must be scalar, got " + out.shape_string());
  return out.item();
}

}  // namespace

Matrix numeric_gradient(const ScalarFunction& f, const Matrix& x, double eps) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double plus = evaluate(f, probe);
    probe.data()[i] = orig - eps;
    const double minus = evaluate(f, probe);
    probe.data()[i] = orig;
    g.data()[i] = (plus - minus) / (2.0 * eps);
  }
  return g;
}

double grad_check(const ScalarFunction& f, const Matrix& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw RangeError("grad_check: eps must lie in [1e-7, 1e-3]");
  Tape tape;
  const Tensor input = tape.variable(x);
  const Tensor out = f(tape, input);
  if (!out.is_scalar()) throw ContractError("grad_check: function output must be scalar, got " + out.shape_string());
  tape.backward(out);
  const Matrix analytic = input.grad();
  const Matrix numeric = numeric_gradient(f, x, eps);
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace emo::ad
