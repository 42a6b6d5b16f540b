#include "emo/attention.hpp"

#include <cmath>

namespace emo {

Matrix random_matrix(Index rows, Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

void init_block(ParameterSet& params, const std::string& prefix, const BlockShape& shape, Rng& rng) {
  if (shape.heads < 1 || shape.width % shape.heads != 0) {
    throw DimensionError("attention block: heads must divide width (" + std::to_string(shape.width) + ")");
  }
  const int dh = shape.width / shape.heads;
  const auto inv_sqrt = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params.add(prefix + "ln_gamma", Matrix::Ones(1, shape.width));
  params.add(prefix + "ln_beta", Matrix::Zero(1, shape.width));
  for (int h = 0; h < shape.heads; ++h) {
    const std::string s = std::to_string(h);
    params.add(prefix + "wq" + s, random_matrix(shape.width, dh, inv_sqrt(shape.width), rng));
    params.add(prefix + "wk" + s, random_matrix(shape.context_width, dh, inv_sqrt(shape.context_width), rng));
    params.add(prefix + "wv" + s, random_matrix(shape.context_width, dh, inv_sqrt(shape.context_width), rng));
    params.add(prefix + "wo" + s, random_matrix(dh, shape.width, inv_sqrt(dh), rng));
  }
  params.add(prefix + "ff_in", random_matrix(shape.width, shape.ff, inv_sqrt(shape.width), rng));
  params.add(prefix + "ff_gate", random_matrix(shape.width, shape.ff, inv_sqrt(shape.width), rng));
  params.add(prefix + "ff_out", random_matrix(shape.ff, shape.width, inv_sqrt(shape.ff), rng));
}

ad::Tensor conditioned_block(const BoundParameters& w, const std::string& prefix, int heads, const ad::Tensor& h,
                             const ad::Tensor& context) {
  const ad::Tensor q_in = ad::layer_norm_rows(h, w[prefix + "ln_gamma"], w[prefix + "ln_beta"]);
  ad::Tensor attended;
  for (int hd = 0; hd < heads; ++hd) {
    const std::string s = std::to_string(hd);
    const ad::Tensor q = ad::matmul(q_in, w[prefix + "wq" + s]);
    const ad::Tensor k = ad::matmul(context, w[prefix + "wk" + s]);
    const ad::Tensor v = ad::matmul(context, w[prefix + "wv" + s]);
    const double temperature = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const ad::Tensor weights = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), temperature));
    const ad::Tensor out = ad::matmul(ad::matmul(weights, v), w[prefix + "wo" + s]);
    attended = hd == 0 ? out : ad::add(attended, out);
  }
  const ad::Tensor gate = ad::mul(ad::matmul(attended, w[prefix + "ff_in"]), ad::matmul(h, w[prefix + "ff_gate"]));
  const ad::Tensor ff = ad::matmul(ad::tanh(gate), w[prefix + "ff_out"]);
  return ad::add(attended, ff);
}

}  // namespace emo
