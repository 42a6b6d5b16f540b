#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "emo/errors.hpp"
#include "emo/render.hpp"

namespace emo {

inline constexpr double kPsnrCap = 99.0;

namespace detail {
template <typename A, typename B>
void require_same_dims(const char* what, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": [" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + "] vs [" +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + "]");
  }
}

template <typename A, typename B>
double mean_row_distance(const char* what, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_dims(what, a, b);
  if (a.rows() == 0) throw DomainError(std::string(what) + ": empty sequence");
  return (a - b).rowwise().norm().mean();
}
}  // namespace detail

/// Average expression distance: frame-mean L2 over expression coefficients, divided by E.
template <typename A, typename B>
double aed(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt) {
  return detail::mean_row_distance("aed", pred, gt) / static_cast<double>(pred.cols());
}

/// Average pose distance: frame-mean L2 over jaw axis-angle vectors.
template <typename A, typename B>
double apd(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt) {
  if (pred.cols() != 3) throw DimensionError("apd: jaw vectors must have 3 columns");
  return detail::mean_row_distance("apd", pred, gt);
}

/// Root-mean-square of per-vertex Euclidean distances.
template <typename A, typename B>
double vertex_rmse(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  detail::require_same_dims("vertex_rmse", a, b);
  if (a.rows() == 0) throw DomainError("vertex_rmse: no vertices");
  return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

/// 10 log10(1 / MSE) with peak 1; identical images give kPsnrCap.
double psnr(const Raster& x, const Raster& y);

/// Single-scale SSIM on Rec. 601 luma, 7x7 uniform windows over valid positions.
double ssim(const Raster& x, const Raster& y);

/// Rec. 601 luma, H x W.
Eigen::MatrixXd luma(const Raster& r);

}  // namespace emo
