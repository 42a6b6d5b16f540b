#pragma once

// Orthographic point-splat renderer with a per-pixel z-buffer. Pixels store
// the index of the winning vertex so colour gradients can be routed back with
// the assignment held fixed.

#include <filesystem>
#include <span>
#include <vector>

#include "emo/autodiff.hpp"
#include "emo/head_model.hpp"

namespace emo {

inline constexpr double kBackground = 0.5;

struct Camera {
  Eigen::Matrix3d frame = Eigen::Matrix3d::Identity();  // rows: right, up, towards the viewer
  double extent_width = 2.2;
  double extent_height = 2.2;
  int height = 64;
  int width = 64;
  double splat_radius = 1.5;  // pixels

  void validate() const;
};

struct Raster {
  int height = 0;
  int width = 0;
  Matrix pixels;           // (H * W) x 3, row-major over (y, x)
  Eigen::VectorXd depth;   // +inf where nothing was splatted
  std::vector<int> owner;  // vertex index per pixel, -1 for background

  double at(int y, int x, int c) const { return pixels(static_cast<Index>(y) * width + x, c); }
};

/// Z-buffered splat assignment only: nearest vertex per pixel, ties to the lower index.
Raster rasterize(const Matrix& vertices, const Camera& cam);
Raster render(const AvatarState& state, const Camera& cam);

/// Pixels for per-vertex colours under a fixed owner map; background where owner < 0.
ad::Tensor shade(const ad::Tensor& colors, std::span<const int> owner);
Matrix shade(const Matrix& colors, std::span<const int> owner);

/// Binary PPM (P6, 8-bit).
void write_ppm(const Raster& raster, const std::filesystem::path& path);
/// Portable float map (PF, little-endian 32-bit) for lossless-ish diffing.
void write_pfm(const Raster& raster, const std::filesystem::path& path);

/// Side-by-side concatenation of rasters of equal height.
Raster hstack(const std::vector<Raster>& rasters);

}  // namespace emo
