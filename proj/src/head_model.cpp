#include "emo/head_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "emo/errors.hpp"
#include "emo/f32.hpp"
#include "emo/rng.hpp"
#include "emo/rotation.hpp"

namespace emo {

namespace {

double to_float(double v) { return round_f32(v); }

void check_params(const HeadTemplate& tmpl, Index exp_len) {
  if (exp_len != tmpl.expression_dims()) {
    throw DimensionError("head params: expected " + std::to_string(tmpl.expression_dims()) + " expression coefficients, got " +
                         std::to_string(exp_len));
  }
}

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

std::string_view region_name(Region r) {
  switch (r) {
    case Region::brow: return "brow";
    case Region::eye: return "eye";
    case Region::nose: return "nose";
    case Region::mouth: return "mouth";
    case Region::jaw: return "jaw";
    case Region::other: return "other";
  }
  return "other";
}

void HeadTemplate::validate() const {
  const Index v = vertex_count();
  if (v < 4) throw DimensionError("template needs at least 4 vertices");
  if (mean_vertices.cols() != 3) throw DimensionError("mean_vertices must be V x 3");
  if (expression_dims() < 1) throw DimensionError("template needs at least one expression direction");
  if (exp_basis.rows() != 3 * v) throw DimensionError("exp_basis must have 3V rows");
  if (skin_weights.size() != v || static_cast<Index>(region_labels.size()) != v) {
    throw DimensionError("skin_weights / region_labels must have one entry per vertex");
  }
  const double ortho = (jaw_axis_frame.transpose() * jaw_axis_frame - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-10) throw DomainError("jaw_axis_frame is not orthonormal");
  for (Index i = 0; i < v; ++i) {
    const double w = skin_weights(i);
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("skin weight outside [0, 1] at vertex " + std::to_string(i));
    const Region r = region_labels[static_cast<std::size_t>(i)];
    if ((r == Region::brow || r == Region::eye) && w != 0.0) {
      throw DomainError("brow/eye vertex " + std::to_string(i) + " has nonzero jaw weight");
    }
  }
}

VectorXd HeadParams::concat() const {
  VectorXd p(exp.size() + 3);
  p << exp, jaw;
  return p;
}

HeadParams HeadParams::split(const Eigen::Ref<const VectorXd>& p, Index expression_dims) {
  if (p.size() != expression_dims + 3) {
    throw DimensionError("parameter vector: expected length " + std::to_string(expression_dims + 3) + ", got " +
                         std::to_string(p.size()));
  }
  HeadParams out;
  out.exp = p.head(expression_dims);
  out.jaw = p.tail<3>();
  return out;
}

Matrix synthesize_vertices(const HeadTemplate& tmpl, const HeadParams& params) {
  check_params(tmpl, params.exp.size());
  const Index v = tmpl.vertex_count();
  const VectorXd offsets = tmpl.exp_basis * params.exp;
  const Eigen::Matrix3d rot = tmpl.jaw_axis_frame * rodrigues(params.jaw) * tmpl.jaw_axis_frame.transpose();
  Matrix out(v, 3);
  for (Index i = 0; i < v; ++i) {
    const Vector3d blend = tmpl.mean_vertices.row(i).transpose() + offsets.segment<3>(3 * i);
    const Vector3d local = blend - tmpl.jaw_pivot;
    const Vector3d articulated = rot * local + tmpl.jaw_pivot;
    out.row(i) = (blend + tmpl.skin_weights(i) * (articulated - blend)).transpose();
  }
  return out;
}

Matrix synthesize_vertices(const HeadTemplate& tmpl, const Eigen::Ref<const VectorXd>& p) {
  return synthesize_vertices(tmpl, HeadParams::split(p, tmpl.expression_dims()));
}

std::vector<ad::Tensor> synthesize_vertices(ad::Tape& tape, const HeadTemplate& tmpl, const ad::Tensor& p_seq) {
  const Index e = tmpl.expression_dims();
  const Index v = tmpl.vertex_count();
  if (p_seq.cols() != e + 3) {
    throw DimensionError("synthesize_vertices: expected " + std::to_string(e + 3) + " parameters per frame, got " +
                         std::to_string(p_seq.cols()));
  }
  const ad::Tensor basis_t = tape.constant(tmpl.exp_basis.transpose());
  const ad::Tensor mean_flat = tape.constant(Eigen::Map<const Matrix>(tmpl.mean_vertices.data(), 1, 3 * v));
  const ad::Tensor pivot_rows = tape.constant(tmpl.jaw_pivot.transpose().replicate(v, 1));
  const ad::Tensor weights = tape.constant(tmpl.skin_weights.replicate(1, 3));
  const ad::Tensor frame = tape.constant(tmpl.jaw_axis_frame);
  const ad::Tensor frame_t = tape.constant(tmpl.jaw_axis_frame.transpose());

  const ad::Tensor blend_all = ad::add_rowwise(ad::matmul(ad::slice_cols(p_seq, 0, e), basis_t), mean_flat);
  std::vector<ad::Tensor> frames;
  frames.reserve(static_cast<std::size_t>(p_seq.rows()));
  for (Index t = 0; t < p_seq.rows(); ++t) {
    const ad::Tensor blend = ad::reshape(ad::slice_rows(blend_all, t, 1), v, 3);
    const ad::Tensor jaw = ad::slice_cols(ad::slice_rows(p_seq, t, 1), e, 3);
    const ad::Tensor rot = ad::matmul(ad::matmul(frame, ad::rodrigues(jaw)), frame_t);
    const ad::Tensor local = ad::sub(blend, pivot_rows);
    const ad::Tensor moved = ad::sub(ad::matmul(local, ad::transpose(rot)), local);
    frames.push_back(ad::add(blend, ad::mul(moved, weights)));
  }
  return frames;
}

VectorXd local_expression_magnitude(const HeadTemplate& tmpl, const Eigen::Ref<const VectorXd>& exp) {
  check_params(tmpl, exp.size());
  const VectorXd offsets = tmpl.exp_basis * exp;
  VectorXd mag(tmpl.vertex_count());
  for (Index i = 0; i < mag.size(); ++i) mag(i) = offsets.segment<3>(3 * i).norm();
  return mag;
}

HeadTemplate make_default_template(std::uint64_t seed, int vertices, int expression_dims) {
  if (vertices < 64) throw DomainError("make_default_template: need at least 64 vertices");
  if (expression_dims < 4) throw DomainError("make_default_template: need at least 4 expression dims");
  const Vector3d radii(0.75, 1.0, 0.8);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  Rng rng(mix_seed(seed, 0x7E41));

  HeadTemplate t;
  t.mean_vertices.resize(vertices, 3);
  t.skin_weights.resize(vertices);
  t.region_labels.resize(static_cast<std::size_t>(vertices));

  // Fibonacci lattice on the +z hemisphere with a small seeded jitter.
  for (int i = 0; i < vertices; ++i) {
    const double z = std::clamp((i + 0.5 + rng.uniform(-0.25, 0.25)) / vertices, 1e-3, 1.0);
    const double phi = i * golden + rng.uniform(-0.1, 0.1);
    const double r = std::sqrt(1.0 - z * z);
    const Vector3d dir(r * std::cos(phi), r * std::sin(phi), z);
    for (int c = 0; c < 3; ++c) t.mean_vertices(i, c) = to_float(radii(c) * dir(c));

    const double lat = std::asin(dir.y());
    const double lon = std::abs(std::atan2(dir.x(), dir.z()));
    Region region = Region::other;
    if (lat > 0.55) {
      region = Region::brow;
    } else if (lat > 0.25 && lon > 0.2 && lon < 0.9) {
      region = Region::eye;
    } else if (lat > -0.15 && lat <= 0.35 && lon <= 0.25) {
      region = Region::nose;
    } else if (lat > -0.6 && lat <= -0.15 && lon < 0.6) {
      region = Region::mouth;
    } else if (lat <= -0.6) {
      region = Region::jaw;
    }
    t.region_labels[static_cast<std::size_t>(i)] = region;
    const bool upper = region == Region::brow || region == Region::eye;
    t.skin_weights(i) = upper ? 0.0 : to_float(smoothstep((-0.1 - lat) / 0.6));
  }

  t.jaw_pivot = Vector3d(0.0, -0.25, to_float(-0.3));
  t.jaw_axis_frame.setIdentity();

  // Each expression direction is a smooth Gaussian bump centred in one of the
  // expressive regions, rescaled to a column norm in [0.5, 2].
  const std::array<Region, 3> cycle{Region::brow, Region::eye, Region::mouth};
  t.exp_basis.resize(3 * vertices, expression_dims);
  for (int k = 0; k < expression_dims; ++k) {
    const Region target = cycle[static_cast<std::size_t>(k) % cycle.size()];
    std::vector<int> members;
    for (int i = 0; i < vertices; ++i) {
      if (t.region_labels[static_cast<std::size_t>(i)] == target) members.push_back(i);
    }
    const int center_idx = members.empty() ? static_cast<int>(rng.below(static_cast<std::uint64_t>(vertices)))
                                           : members[rng.below(members.size())];
    const Vector3d center = t.mean_vertices.row(center_idx).transpose();
    const double sigma = rng.uniform(0.15, 0.35);
    Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    Eigen::VectorXd col(3 * vertices);
    for (int i = 0; i < vertices; ++i) {
      const double d2 = (t.mean_vertices.row(i).transpose() - center).squaredNorm();
      col.segment<3>(3 * i) = std::exp(-d2 / (2.0 * sigma * sigma)) * dir;
    }
    col *= rng.uniform(0.5, 2.0) / col.norm();
    for (int r = 0; r < 3 * vertices; ++r) t.exp_basis(r, k) = to_float(col(r));
  }
  t.validate();
  return t;
}

}  // namespace emo
