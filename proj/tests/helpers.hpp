#pragma once

#include "emo/checkpoint.hpp"
#include "emo/rng.hpp"

namespace emo::test {

inline Matrix randn(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Stand-in for a trained model: every weight, zero-initialised heads included,
// gets a random perturbation.
inline void perturb(AvatarModel& m, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    Matrix& w = m.params.value(i);
    w += randn(w.rows(), w.cols(), rng, scale);
  }
}

inline ModelConfig small_config(int expression_dims = 4) {
  ModelConfig cfg;
  cfg.expression_dims = expression_dims;
  cfg.token_dim = 8;
  cfg.geo.d_model = 8;
  cfg.geo.ff = 8;
  cfg.app.ff = 8;
  cfg.app.layers = 1;
  return cfg;
}

}  // namespace emo::test
