#include "emo/metrics.hpp"

#include <algorithm>

namespace emo {

namespace {

constexpr int kWindow = 7;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same_raster(const char* what, const Raster& x, const Raster& y) {
  if (x.height != y.height || x.width != y.width) {
    throw DimensionError(std::string(what) + ": raster sizes differ (" + std::to_string(x.height) + "x" + std::to_string(x.width) +
                         " vs " + std::to_string(y.height) + "x" + std::to_string(y.width) + ")");
  }
}

}  // namespace

double psnr(const Raster& x, const Raster& y) {
  require_same_raster("psnr", x, y);
  const double mse = (x.pixels - y.pixels).squaredNorm() / static_cast<double>(x.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Eigen::MatrixXd luma(const Raster& r) {
  Eigen::MatrixXd y(r.height, r.width);
  for (int i = 0; i < r.height; ++i) {
    for (int j = 0; j < r.width; ++j) {
      y(i, j) = 0.299 * r.at(i, j, 0) + 0.587 * r.at(i, j, 1) + 0.114 * r.at(i, j, 2);
    }
  }
  return y;
}

double ssim(const Raster& x, const Raster& y) {
  require_same_raster("ssim", x, y);
  if (x.height < kWindow || x.width < kWindow) throw DimensionError("ssim: images must be at least 7x7");
  const Eigen::MatrixXd a = luma(x);
  const Eigen::MatrixXd b = luma(y);
  const Eigen::MatrixXd aa = a.cwiseProduct(a);
  const Eigen::MatrixXd bb = b.cwiseProduct(b);
  const Eigen::MatrixXd ab = a.cwiseProduct(b);
  const double n = kWindow * kWindow;
  double total = 0.0;
  const int rows = x.height - kWindow + 1;
  const int cols = x.width - kWindow + 1;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double mu_a = a.block(i, j, kWindow, kWindow).sum() / n;
      const double mu_b = b.block(i, j, kWindow, kWindow).sum() / n;
      const double var_a = aa.block(i, j, kWindow, kWindow).sum() / n - mu_a * mu_a;
      const double var_b = bb.block(i, j, kWindow, kWindow).sum() / n - mu_b * mu_b;
      const double cov = ab.block(i, j, kWindow, kWindow).sum() / n - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) / ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
    }
  }
  return total / static_cast<double>(rows * cols);
}

}  // namespace emo
