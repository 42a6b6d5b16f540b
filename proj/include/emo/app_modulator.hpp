#pragma once

// Appearance path: identity region tokens a from the neutral reference,
// emotion appearance tokens a_e = phi(T), their concatenation, and a
// cross-attention decoder from per-vertex queries to RGB residuals on top of
// the reference's region colours.

#include "emo/attention.hpp"
#include "emo/emotion.hpp"
#include "emo/head_model.hpp"
#include "emo/parameters.hpp"

namespace emo {

struct AppModulatorConfig {
  int layers = 2;
  int heads = 2;
  int ff = 32;
  int token_dim = 32;

  void validate() const;
};

/// Rest position (3) + region one-hot + local and global expression magnitude.
inline constexpr int kQueryFeatures = 3 + kRegionCount + 2;

struct ReferenceSummary {
  Matrix region_colors;     // K x 3 mean colour per region
  Matrix region_positions;  // K x 3 mean rest position per region
  Matrix skip_colors;       // V x 3, each vertex gets its region's mean colour
};

/// Throws DimensionError when the reference does not match the template.
ReferenceSummary summarize_reference(const AvatarState& reference, const HeadTemplate& tmpl);

void init_app_parameters(ParameterSet& params, const AppModulatorConfig& cfg, Rng& rng);

/// K x D identity tokens.
ad::Tensor extract_features(const BoundParameters& w, const ad::Tensor& region_colors, const ad::Tensor& region_positions);
Matrix extract_features(const ParameterSet& params, const AvatarState& reference, const HeadTemplate& tmpl);

/// N x D; row j is phi applied to column j of T.
ad::Tensor emotion_appearance_tokens(const BoundParameters& w, const ad::Tensor& token);
Matrix emotion_appearance_tokens(const ParameterSet& params, const Matrix& token);

/// [a ; a_e], (K + N) x D.
ad::Tensor concat_features(const ad::Tensor& a, const ad::Tensor& a_e);
Matrix concat_features(const Matrix& a, const Matrix& a_e);

/// V x kQueryFeatures for the parameter vector p = [exp | jaw].
Matrix vertex_query_features(const HeadTemplate& tmpl, const Eigen::Ref<const Eigen::VectorXd>& p);

/// Colours in [0, 1]: skip colours plus the decoded residual.
ad::Tensor decode_colors(const BoundParameters& w, const AppModulatorConfig& cfg, const ad::Tensor& features, const Matrix& query,
                         const Matrix& skip_colors);
Matrix decode_colors(const ParameterSet& params, const AppModulatorConfig& cfg, const Matrix& features, const Matrix& query,
                     const Matrix& skip_colors);

}  // namespace emo
