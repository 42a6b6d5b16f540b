#pragma once

// Desk-scale parametric head: mean mesh + linear expression basis + one
// skinned jaw joint. Driving parameters are p = [exp (E) | jaw axis-angle (3)].

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "emo/autodiff.hpp"

namespace emo {

using Matrix = ad::Matrix;
using Eigen::Index;
using Eigen::Vector3d;
using Eigen::VectorXd;

enum class Region : int { brow = 0, eye, nose, mouth, jaw, other };
inline constexpr int kRegionCount = 6;
std::string_view region_name(Region r);

struct HeadTemplate {
  Matrix mean_vertices;        // V x 3
  Matrix exp_basis;            // 3V x E; row 3*i + c is coordinate c of vertex i
  Vector3d jaw_pivot = Vector3d::Zero();
  Eigen::Matrix3d jaw_axis_frame = Eigen::Matrix3d::Identity();
  VectorXd skin_weights;       // V, fraction of the jaw rotation applied
  std::vector<Region> region_labels;

  Index vertex_count() const { return mean_vertices.rows(); }
  Index expression_dims() const { return exp_basis.cols(); }
  Index param_dims() const { return expression_dims() + 3; }

  /// Throws DimensionError / DomainError when an invariant is broken.
  void validate() const;
};

struct HeadParams {
  VectorXd exp;
  Vector3d jaw = Vector3d::Zero();

  /// [exp | jaw], length E + 3.
  VectorXd concat() const;
  static HeadParams split(const Eigen::Ref<const VectorXd>& p, Index expression_dims);
};

struct AvatarState {
  Matrix vertices;  // V x 3
  Matrix colors;    // V x 3, in [0, 1]
};

/// V_i = blend_i + w_i (R (blend_i - pivot) + pivot - blend_i),
/// blend = mean + sum_k exp_k basis[:, k]; R is the jaw rotation in the jaw frame.
Matrix synthesize_vertices(const HeadTemplate& tmpl, const HeadParams& params);
Matrix synthesize_vertices(const HeadTemplate& tmpl, const Eigen::Ref<const VectorXd>& p);

/// Differentiable version over a parameter sequence (F x (E+3)); one V x 3
/// tensor per frame.
std::vector<ad::Tensor> synthesize_vertices(ad::Tape& tape, const HeadTemplate& tmpl, const ad::Tensor& p_seq);

/// |(B exp)_i| per vertex: how far the expression moved each vertex.
VectorXd local_expression_magnitude(const HeadTemplate& tmpl, const Eigen::Ref<const VectorXd>& exp);

/// Deterministic pseudo-face on the front (+z) half of an ellipsoid. Requires
/// V >= 64 and E >= 4. Stored quantities are rounded to float precision so the
/// template survives the f32 container bit-exactly.
HeadTemplate make_default_template(std::uint64_t seed, int vertices, int expression_dims);

}  // namespace emo
