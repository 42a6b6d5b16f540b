#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>

namespace emo {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 3, 3> k;
  k << Scalar(0), -v(2), v(1),
       v(2), Scalar(0), -v(0),
       -v(1), v(0), Scalar(0);
  return k;
}

/// Coefficients of R = I + a K + b K^2 (K = skew(w), theta = |w|) and the
/// radial derivatives c = a'(theta)/theta, d = b'(theta)/theta. Small angles
/// use the Taylor series so w = 0 is exact.
template <typename Scalar>
struct RodriguesCoefficients {
  Scalar a, b, c, d;

  explicit RodriguesCoefficients(Scalar theta_sq) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    if (theta_sq < Scalar(2.5e-3)) {
      const Scalar t2 = theta_sq;
      const Scalar t4 = t2 * t2;
      const Scalar t6 = t4 * t2;
      a = Scalar(1) - t2 / Scalar(6) + t4 / Scalar(120) - t6 / Scalar(5040);
      b = Scalar(0.5) - t2 / Scalar(24) + t4 / Scalar(720) - t6 / Scalar(40320);
      c = Scalar(-1) / Scalar(3) + t2 / Scalar(30) - t4 / Scalar(840) + t6 / Scalar(45360);
      d = Scalar(-1) / Scalar(12) + t2 / Scalar(180) - t4 / Scalar(6720) + t6 / Scalar(453600);
    } else {
      const Scalar theta = sqrt(theta_sq);
      const Scalar s = sin(theta);
      const Scalar half = sin(theta / Scalar(2));
      const Scalar one_minus_cos = Scalar(2) * half * half;
      a = s / theta;
      b = one_minus_cos / theta_sq;
      c = (theta * cos(theta) - s) / (theta_sq * theta);
      d = (theta * s - Scalar(2) * one_minus_cos) / (theta_sq * theta_sq);
    }
  }
};

/// Rotation matrix for an axis-angle vector; the zero vector maps to identity.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> rodrigues(const Eigen::MatrixBase<Derived>& axis_angle) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 3, 1> w(axis_angle(0), axis_angle(1), axis_angle(2));
  const RodriguesCoefficients<Scalar> k(w.squaredNorm());
  const Eigen::Matrix<Scalar, 3, 3> s = skew(w);
  return Eigen::Matrix<Scalar, 3, 3>::Identity() + k.a * s + k.b * (s * s);
}

/// dR/dw_i for i = 0, 1, 2.
template <typename Derived>
std::array<Eigen::Matrix<typename Derived::Scalar, 3, 3>, 3> rodrigues_jacobian(const Eigen::MatrixBase<Derived>& axis_angle) {
  using Scalar = typename Derived::Scalar;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  const Eigen::Matrix<Scalar, 3, 1> w(axis_angle(0), axis_angle(1), axis_angle(2));
  const RodriguesCoefficients<Scalar> k(w.squaredNorm());
  const Mat3 s = skew(w);
  const Mat3 s2 = s * s;
  std::array<Mat3, 3> out;
  for (int i = 0; i < 3; ++i) {
    const Mat3 e = skew(Eigen::Matrix<Scalar, 3, 1>::Unit(i));
    out[i] = (k.c * w(i)) * s + k.a * e + (k.d * w(i)) * s2 + k.b * (e * s + s * e);
  }
  return out;
}

}  // namespace emo
