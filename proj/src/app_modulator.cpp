#include "emo/app_modulator.hpp"

#include <cmath>
#include <string>

namespace emo {

namespace {

std::string layer_prefix(int l) { return "app.l" + std::to_string(l) + "."; }

}  // namespace

void AppModulatorConfig::validate() const {
  if (layers < 1 || heads < 1 || ff < 1 || token_dim < 1) throw DimensionError("app modulator: all sizes must be positive");
  if (token_dim % heads != 0) throw DimensionError("app modulator: heads must divide token_dim");
}

ReferenceSummary summarize_reference(const AvatarState& reference, const HeadTemplate& tmpl) {
  const Index v = tmpl.vertex_count();
  if (reference.vertices.rows() != v || reference.colors.rows() != v || reference.vertices.cols() != 3 ||
      reference.colors.cols() != 3) {
    throw DimensionError("reference has " + std::to_string(reference.colors.rows()) + " vertices, template has " +
                         std::to_string(v));
  }
  ReferenceSummary s;
  s.region_colors = Matrix::Zero(kRegionCount, 3);
  s.region_positions = Matrix::Zero(kRegionCount, 3);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(kRegionCount);
  for (Index i = 0; i < v; ++i) {
    const int r = static_cast<int>(tmpl.region_labels[static_cast<std::size_t>(i)]);
    s.region_colors.row(r) += reference.colors.row(i);
    s.region_positions.row(r) += reference.vertices.row(i);
    counts(r) += 1.0;
  }
  for (int r = 0; r < kRegionCount; ++r) {
    if (counts(r) > 0.0) {
      s.region_colors.row(r) /= counts(r);
      s.region_positions.row(r) /= counts(r);
    }
  }
  s.skip_colors.resize(v, 3);
  for (Index i = 0; i < v; ++i) s.skip_colors.row(i) = s.region_colors.row(static_cast<int>(tmpl.region_labels[static_cast<std::size_t>(i)]));
  return s;
}

void init_app_parameters(ParameterSet& params, const AppModulatorConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.token_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  params.add("app.color_enc", random_matrix(3, d, 1.0, rng));
  params.add("app.pos_enc", random_matrix(3, d, 1.0, rng));
  params.add("app.phi", random_matrix(d, d, inv_sqrt_d, rng));
  params.add("app.query", random_matrix(kQueryFeatures, d, 1.0 / std::sqrt(static_cast<double>(kQueryFeatures)), rng));
  const BlockShape shape{d, d, cfg.heads, cfg.ff};
  for (int l = 0; l < cfg.layers; ++l) init_block(params, layer_prefix(l), shape, rng);
  params.add("app.head", Matrix::Zero(d, 3));
}

ad::Tensor extract_features(const BoundParameters& w, const ad::Tensor& region_colors, const ad::Tensor& region_positions) {
  return ad::add(ad::matmul(region_colors, w["app.color_enc"]), ad::matmul(region_positions, w["app.pos_enc"]));
}

Matrix extract_features(const ParameterSet& params, const AvatarState& reference, const HeadTemplate& tmpl) {
  const ReferenceSummary s = summarize_reference(reference, tmpl);
  ad::Tape tape;
  const BoundParameters w(tape, params, none_trainable);
  return extract_features(w, tape.constant(s.region_colors), tape.constant(s.region_positions)).value();
}

ad::Tensor emotion_appearance_tokens(const BoundParameters& w, const ad::Tensor& token) {
  const ad::Tensor& phi = w["app.phi"];
  if (token.rows() != phi.rows()) {
    throw DimensionError("emotion_appearance_tokens: token " + token.shape_string() + " does not match phi " + phi.shape_string());
  }
  return ad::matmul(ad::transpose(token), phi);
}

Matrix emotion_appearance_tokens(const ParameterSet& params, const Matrix& token) {
  ad::Tape tape;
  const BoundParameters w(tape, params, none_trainable);
  return emotion_appearance_tokens(w, tape.constant(token)).value();
}

ad::Tensor concat_features(const ad::Tensor& a, const ad::Tensor& a_e) { return ad::concat_rows(a, a_e); }

Matrix concat_features(const Matrix& a, const Matrix& a_e) {
  if (a.cols() != a_e.cols()) throw DimensionError("concat_features: token widths differ");
  Matrix out(a.rows() + a_e.rows(), a.cols());
  out << a, a_e;
  return out;
}

Matrix vertex_query_features(const HeadTemplate& tmpl, const Eigen::Ref<const Eigen::VectorXd>& p) {
  const Index e = tmpl.expression_dims();
  if (p.size() != e + 3) throw DimensionError("vertex_query_features: parameter length mismatch");
  const Eigen::VectorXd exp = p.head(e);
  const Eigen::VectorXd local = local_expression_magnitude(tmpl, exp);
  const double global = exp.norm() / std::sqrt(static_cast<double>(e));
  const Index v = tmpl.vertex_count();
  Matrix q = Matrix::Zero(v, kQueryFeatures);
  q.leftCols(3) = tmpl.mean_vertices;
  for (Index i = 0; i < v; ++i) {
    q(i, 3 + static_cast<int>(tmpl.region_labels[static_cast<std::size_t>(i)])) = 1.0;
    q(i, 3 + kRegionCount) = local(i);
    q(i, 4 + kRegionCount) = global;
  }
  return q;
}

ad::Tensor decode_colors(const BoundParameters& w, const AppModulatorConfig& cfg, const ad::Tensor& features, const Matrix& query,
                         const Matrix& skip_colors) {
  if (query.cols() != kQueryFeatures || skip_colors.rows() != query.rows() || skip_colors.cols() != 3) {
    throw DimensionError("decode_colors: query/skip shapes do not agree");
  }
  if (features.cols() != cfg.token_dim) throw DimensionError("decode_colors: feature width " + features.shape_string());
  ad::Tape& tape = *features.tape();
  ad::Tensor h = ad::matmul(tape.constant(query), w["app.query"]);
  ad::Tensor total;
  for (int l = 0; l < cfg.layers; ++l) {
    const ad::Tensor u = conditioned_block(w, layer_prefix(l), cfg.heads, h, features);
    h = ad::add(h, u);
    total = l == 0 ? u : ad::add(total, u);
  }
  const ad::Tensor residual = ad::matmul(total, w["app.head"]);
  return ad::clamp(ad::add(tape.constant(skip_colors), residual), 0.0, 1.0);
}

Matrix decode_colors(const ParameterSet& params, const AppModulatorConfig& cfg, const Matrix& features, const Matrix& query,
                     const Matrix& skip_colors) {
  ad::Tape tape;
  const BoundParameters w(tape, params, none_trainable);
  return decode_colors(w, cfg, tape.constant(features), query, skip_colors).value();
}

}  // namespace emo
