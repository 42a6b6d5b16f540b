#pragma once

#include <string>

#include "emo/parameters.hpp"
#include "emo/rng.hpp"

namespace emo {

/// Shapes for one emotion-conditioned cross-attention block.
struct BlockShape {
  int width = 32;          // query-stream width
  int context_width = 32;  // width of the key/value tokens
  int heads = 2;
  int ff = 64;
};

/// Adds `<prefix>ln_gamma`, `ln_beta`, per-head `wq<h>`, `wk<h>`, `wv<h>`,
/// `wo<h>`, and the gated feed-forward `ff_in`, `ff_gate`, `ff_out`.
void init_block(ParameterSet& params, const std::string& prefix, const BlockShape& shape, Rng& rng);

/// Update for the query stream h (M x width) given context tokens (K x context_width):
///   a = sum_h softmax(LN(h) Wq_h (C Wk_h)^T / sqrt(d_h)) (C Wv_h) Wo_h
///   u = a + tanh((a W_in) * (h W_gate)) W_out
/// Values, output and feed-forward carry no bias, so an all-zero context gives u = 0.
ad::Tensor conditioned_block(const BoundParameters& w, const std::string& prefix, int heads, const ad::Tensor& h,
                             const ad::Tensor& context);

/// N(0, scale^2) matrix.
Matrix random_matrix(Index rows, Index cols, double scale, Rng& rng);

}  // namespace emo
