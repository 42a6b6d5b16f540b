#include "emo/geo_modulator.hpp"

#include <cmath>
#include <string>

#include "emo/emotion.hpp"

namespace emo {

namespace {

std::string layer_prefix(int l) { return "geo.l" + std::to_string(l) + "."; }

}  // namespace

void GeoModulatorConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || ff < 1 || param_dims < 1 || token_dim < 1 || group_size < 0) {
    throw DimensionError("geo modulator: all sizes must be positive");
  }
  if (d_model % heads != 0) throw DimensionError("geo modulator: heads must divide d_model");
}

void init_geo_parameters(ParameterSet& params, const GeoModulatorConfig& cfg, Rng& rng) {
  cfg.validate();
  const int g = cfg.resolved_group();
  params.add("geo.embed", random_matrix(g, cfg.d_model, 1.0 / std::sqrt(static_cast<double>(g)), rng));
  const BlockShape shape{cfg.d_model, cfg.token_dim, cfg.heads, cfg.ff};
  for (int l = 0; l < cfg.layers; ++l) init_block(params, layer_prefix(l), shape, rng);
  params.add("geo.head", Matrix::Zero(cfg.d_model, g));
}

ad::Tensor modulate_sequence(const BoundParameters& w, const GeoModulatorConfig& cfg, const ad::Tensor& p_seq,
                             const ad::Tensor& token) {
  if (p_seq.cols() != cfg.param_dims) {
    throw DimensionError("modulate: expected " + std::to_string(cfg.param_dims) + " parameters per frame, got " +
                         std::to_string(p_seq.cols()));
  }
  if (p_seq.rows() < 1) throw DimensionError("modulate: empty parameter sequence");
  if (token.rows() != cfg.token_dim || token.cols() != kEmotionCategories) {
    throw DimensionError("modulate: emotion token " + token.shape_string() + " does not match token_dim " +
                         std::to_string(cfg.token_dim));
  }
  if (!p_seq.value().allFinite() || !token.value().allFinite()) throw DomainError("modulate: non-finite input");

  ad::Tape& tape = *p_seq.tape();
  const int g = cfg.resolved_group();
  const int chunks = cfg.token_count();
  const Index frames = p_seq.rows();
  const int padded = chunks * g;

  ad::Tensor grouped = p_seq;
  if (padded > cfg.param_dims) grouped = ad::concat_cols(p_seq, tape.constant(Matrix::Zero(frames, padded - cfg.param_dims)));
  grouped = ad::reshape(grouped, frames * chunks, g);

  const ad::Tensor context = ad::transpose(token);
  ad::Tensor h = ad::matmul(grouped, w["geo.embed"]);
  ad::Tensor total;
  for (int l = 0; l < cfg.layers; ++l) {
    const ad::Tensor u = conditioned_block(w, layer_prefix(l), cfg.heads, h, context);
    h = ad::add(h, u);
    total = l == 0 ? u : ad::add(total, u);
  }
  ad::Tensor delta = ad::reshape(ad::matmul(total, w["geo.head"]), frames, padded);
  if (padded > cfg.param_dims) delta = ad::slice_cols(delta, 0, cfg.param_dims);
  return ad::add(p_seq, delta);
}

Matrix modulate_sequence(const ParameterSet& params, const GeoModulatorConfig& cfg, const Matrix& p_seq, const Matrix& token) {
  ad::Tape tape;
  const BoundParameters w(tape, params, none_trainable);
  return modulate_sequence(w, cfg, tape.constant(p_seq), tape.constant(token)).value();
}

Eigen::VectorXd modulate(const ParameterSet& params, const GeoModulatorConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& p,
                         const Matrix& token) {
  const Matrix row = p.transpose();
  return modulate_sequence(params, cfg, row, token).row(0).transpose();
}

}  // namespace emo
