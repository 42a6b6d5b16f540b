#include "emo/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "emo/errors.hpp"

namespace emo {

void Camera::validate() const {
  if (height < 16 || width < 16) throw DimensionError("camera resolution must be at least 16x16");
  if (!(extent_width > 0.0 && extent_height > 0.0 && splat_radius > 0.0)) throw DomainError("camera extents must be positive");
  if ((frame.transpose() * frame - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-10) {
    throw DomainError("camera frame is not orthonormal");
  }
}

Raster rasterize(const Matrix& vertices, const Camera& cam) {
  cam.validate();
  if (!vertices.allFinite()) throw DomainError("render: non-finite vertex positions");
  Raster r;
  r.height = cam.height;
  r.width = cam.width;
  const Index pixels = static_cast<Index>(cam.height) * cam.width;
  r.depth = Eigen::VectorXd::Constant(pixels, std::numeric_limits<double>::infinity());
  r.owner.assign(static_cast<std::size_t>(pixels), -1);
  const double rad = cam.splat_radius;
  const double rad2 = rad * rad;
  for (Index i = 0; i < vertices.rows(); ++i) {
    const Eigen::Vector3d p = cam.frame * vertices.row(i).transpose();
    const double px = (p.x() / cam.extent_width + 0.5) * cam.width;
    const double py = (0.5 - p.y() / cam.extent_height) * cam.height;
    const double depth = -p.z();
    const int x0 = std::max(0, static_cast<int>(std::floor(px - rad)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(px + rad)));
    const int y0 = std::max(0, static_cast<int>(std::floor(py - rad)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(py + rad)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - px;
        const double dy = y + 0.5 - py;
        if (dx * dx + dy * dy > rad2) continue;
        const Index k = static_cast<Index>(y) * cam.width + x;
        if (depth < r.depth(k)) {
          r.depth(k) = depth;
          r.owner[static_cast<std::size_t>(k)] = static_cast<int>(i);
        }
      }
    }
  }
  return r;
}

Raster render(const AvatarState& state, const Camera& cam) {
  if (state.colors.rows() != state.vertices.rows()) throw DimensionError("render: colour count differs from vertex count");
  Raster r = rasterize(state.vertices, cam);
  r.pixels = shade(state.colors, r.owner);
  return r;
}

ad::Tensor shade(const ad::Tensor& colors, std::span<const int> owner) { return ad::gather_rows(colors, owner, kBackground); }

Matrix shade(const Matrix& colors, std::span<const int> owner) {
  Matrix out(static_cast<Index>(owner.size()), 3);
  for (std::size_t k = 0; k < owner.size(); ++k) {
    const int src = owner[k];
    if (src < 0) {
      out.row(static_cast<Index>(k)).setConstant(kBackground);
    } else {
      out.row(static_cast<Index>(k)) = colors.row(src);
    }
  }
  return out;
}

void write_ppm(const Raster& raster, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << raster.width << " " << raster.height << "\n255\n";
  for (Index k = 0; k < raster.pixels.rows(); ++k) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(raster.pixels(k, c), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_pfm(const Raster& raster, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "PF\n" << raster.width << " " << raster.height << "\n-1.0\n";
  // PFM scanlines run bottom to top.
  for (int y = raster.height - 1; y >= 0; --y) {
    for (int x = 0; x < raster.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = static_cast<float>(raster.at(y, x, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Raster hstack(const std::vector<Raster>& rasters) {
  if (rasters.empty()) throw DimensionError("hstack: nothing to stack");
  Raster out;
  out.height = rasters.front().height;
  for (const Raster& r : rasters) {
    if (r.height != out.height) throw DimensionError("hstack: heights differ");
    out.width += r.width;
  }
  out.pixels.resize(static_cast<Index>(out.height) * out.width, 3);
  int offset = 0;
  for (const Raster& r : rasters) {
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) {
        out.pixels.row(static_cast<Index>(y) * out.width + offset + x) = r.pixels.row(static_cast<Index>(y) * r.width + x);
      }
    }
    offset += r.width;
  }
  return out;
}

}  // namespace emo
