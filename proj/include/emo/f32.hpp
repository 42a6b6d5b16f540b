#pragma once

// Rounding to f32 precision, the on-disk representation. The round trip goes
// through a volatile float: g++ 11 at -O3 folds (double)(float)x away inside
// some loops, which silently leaves values that do not survive a save/load.

#include <Eigen/Core>

namespace emo {

inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

template <typename Derived>
void round_f32_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = round_f32(m(i, j));
  }
}

}  // namespace emo
