#pragma once

// Geometry path: rewrites driving [exp | jaw] parameters toward a target
// emotion with stacked emotion-conditioned cross-attention blocks. The output
// lives in the same parameter space as the input (same length, same order).

#include <Eigen/Core>

#include "emo/attention.hpp"
#include "emo/parameters.hpp"

namespace emo {

struct GeoModulatorConfig {
  int layers = 2;
  int d_model = 32;
  /// Coefficients per query token; 0 means one token for the whole vector.
  int group_size = 0;
  int heads = 2;
  int ff = 64;
  int param_dims = 19;  // E + 3
  int token_dim = 32;   // D

  int resolved_group() const { return group_size > 0 ? group_size : param_dims; }
  int token_count() const { return (param_dims + resolved_group() - 1) / resolved_group(); }
  void validate() const;
};

/// Adds `geo.embed`, `geo.l<i>.*` blocks and the zero-initialised `geo.head`.
void init_geo_parameters(ParameterSet& params, const GeoModulatorConfig& cfg, Rng& rng);

/// p_seq: F x param_dims, token: D x N. Frames are processed independently.
ad::Tensor modulate_sequence(const BoundParameters& w, const GeoModulatorConfig& cfg, const ad::Tensor& p_seq,
                             const ad::Tensor& token);

Matrix modulate_sequence(const ParameterSet& params, const GeoModulatorConfig& cfg, const Matrix& p_seq, const Matrix& token);
Eigen::VectorXd modulate(const ParameterSet& params, const GeoModulatorConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& p,
                         const Matrix& token);

}  // namespace emo
