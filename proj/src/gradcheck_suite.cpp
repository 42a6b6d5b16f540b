#include "emo/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "emo/checkpoint.hpp"
#include "emo/gradcheck.hpp"
#include "emo/render.hpp"
#include "emo/rng.hpp"
#include "emo/trainer.hpp"

namespace emo {

namespace {

using ad::Tape;
using ad::Tensor;

// Central-difference step. At 1e-6 roundoff on the larger losses already
// reaches the tolerance; at 1e-4 truncation does.
constexpr double kStep = 1e-5;

Matrix randn(Index r, Index c, Rng& rng, double scale = 1.0) { return random_matrix(r, c, scale, rng); }

// Entries with |x| >= margin, so kinks at 0 are never straddled.
Matrix away_from_zero(Index r, Index c, Rng& rng, double margin) {
  Matrix m = randn(r, c, rng);
  for (Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return m;
}

// sum(W .* y) for a fixed random W, so every output entry matters.
Tensor project(Tape& tape, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, tape.constant(randn(y.rows(), y.cols(), rng))));
}

struct Suite {
  double tolerance;
  std::vector<GradcheckRow> rows;

  void check(const std::string& name, const std::vector<std::pair<ad::ScalarFunction, Matrix>>& cases) {
    double worst = 0.0;
    for (const auto& [f, x] : cases) worst = std::max(worst, ad::grad_check(f, x, kStep));
    rows.push_back({name, worst, worst < tolerance});
  }
};

// A small model with every weight (including the zero-initialised heads)
// randomised, so no gradient is identically zero.
AvatarModel random_model(const HeadTemplate& tmpl, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.expression_dims = static_cast<int>(tmpl.expression_dims());
  cfg.token_dim = 8;
  cfg.geo.layers = 2;
  cfg.geo.d_model = 8;
  cfg.geo.heads = 2;
  cfg.geo.ff = 8;
  cfg.geo.group_size = 4;
  cfg.app.layers = 1;
  cfg.app.heads = 2;
  cfg.app.ff = 8;
  AvatarModel m = AvatarModel::initialize(cfg, seed);
  Rng rng(mix_seed(seed, 99));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    Matrix& w = m.params.value(i);
    w += random_matrix(w.rows(), w.cols(), 0.3, rng);
  }
  return m;
}

}  // namespace

std::vector<GradcheckRow> run_gradcheck_suite(double tolerance) {
  Suite s{tolerance, {}};
  Rng rng(20240601);
  using Cases = std::vector<std::pair<ad::ScalarFunction, Matrix>>;

  {
    const Matrix a = randn(3, 4, rng), b = randn(4, 2, rng);
    s.check("matmul", Cases{{[b](Tape& t, const Tensor& x) { return project(t, ad::matmul(x, t.constant(b)), 1); }, a},
                            {[a](Tape& t, const Tensor& x) { return project(t, ad::matmul(t.constant(a), x), 2); }, b}});
  }
  {
    const Matrix a = randn(3, 4, rng), b = randn(3, 4, rng);
    const Matrix c = randn(1, 1, rng);
    s.check("add", Cases{{[b](Tape& t, const Tensor& x) { return project(t, ad::add(x, t.constant(b)), 3); }, a},
                         {[a](Tape& t, const Tensor& x) { return project(t, ad::add(t.constant(a), x), 3); }, c}});
    s.check("sub", Cases{{[b](Tape& t, const Tensor& x) { return project(t, ad::sub(t.constant(b), x), 4); }, a},
                         {[a](Tape& t, const Tensor& x) { return project(t, ad::sub(t.constant(a), x), 4); }, c}});
    s.check("mul", Cases{{[b](Tape& t, const Tensor& x) { return project(t, ad::mul(x, t.constant(b)), 5); }, a},
                         {[a](Tape& t, const Tensor& x) { return project(t, ad::mul(x, t.constant(a)), 5); }, c}});
    s.check("scale", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::scale(x, -1.7), 6); }, a}});
    s.check("tanh", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::tanh(x), 7); }, a}});
    s.check("relu", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::relu(x), 8); }, away_from_zero(3, 4, rng, 0.05)}});
    Matrix inside = randn(3, 4, rng, 0.3);
    for (Index i = 0; i < inside.size(); ++i) {
      double& v = inside.data()[i];
      if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 0.8;
    }
    s.check("clamp", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::clamp(x, -0.5, 0.5), 9); }, inside}});
  }
  {
    const Matrix a = randn(4, 5, rng), r = randn(1, 5, rng);
    s.check("add_rowwise", Cases{{[r](Tape& t, const Tensor& x) { return project(t, ad::add_rowwise(x, t.constant(r)), 10); }, a},
                                 {[a](Tape& t, const Tensor& x) { return project(t, ad::add_rowwise(t.constant(a), x), 10); }, r}});
    s.check("mul_rowwise", Cases{{[r](Tape& t, const Tensor& x) { return project(t, ad::mul_rowwise(x, t.constant(r)), 11); }, a},
                                 {[a](Tape& t, const Tensor& x) { return project(t, ad::mul_rowwise(t.constant(a), x), 11); }, r}});
    s.check("softmax_rows", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::softmax_rows(x), 12); }, a}});
    const Matrix gamma = randn(1, 5, rng), beta = randn(1, 5, rng);
    s.check("layer_norm_rows",
            Cases{{[gamma, beta](Tape& t, const Tensor& x) {
                     return project(t, ad::layer_norm_rows(x, t.constant(gamma), t.constant(beta)), 13);
                   },
                   a},
                  {[a, beta](Tape& t, const Tensor& x) { return project(t, ad::layer_norm_rows(t.constant(a), x, t.constant(beta)), 13); },
                   gamma},
                  {[a, gamma](Tape& t, const Tensor& x) {
                     return project(t, ad::layer_norm_rows(t.constant(a), t.constant(gamma), x), 13);
                   },
                   beta}});
    s.check("sum", Cases{{[](Tape&, const Tensor& x) { return ad::sum(x); }, a}});
    s.check("mean", Cases{{[](Tape&, const Tensor& x) { return ad::mean(x); }, a}});
    s.check("sumsq", Cases{{[](Tape&, const Tensor& x) { return ad::sumsq(x); }, a}});
    s.check("transpose", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::transpose(x), 14); }, a}});
    s.check("reshape", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::reshape(x, 2, 10), 15); }, a}});
    const Matrix b = randn(2, 5, rng), c = randn(4, 3, rng);
    s.check("concat_rows", Cases{{[b](Tape& t, const Tensor& x) { return project(t, ad::concat_rows(x, t.constant(b)), 16); }, a},
                                 {[a](Tape& t, const Tensor& x) { return project(t, ad::concat_rows(t.constant(a), x), 16); }, b}});
    s.check("concat_cols", Cases{{[c](Tape& t, const Tensor& x) { return project(t, ad::concat_cols(x, t.constant(c)), 17); }, a},
                                 {[a](Tape& t, const Tensor& x) { return project(t, ad::concat_cols(t.constant(a), x), 17); }, c}});
    s.check("slice_rows", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::slice_rows(x, 1, 2), 18); }, a}});
    s.check("slice_cols", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::slice_cols(x, 2, 3), 19); }, a}});
    const std::vector<int> index{3, -1, 0, 3, 2, -1, 1};
    s.check("gather_rows", Cases{{[index](Tape& t, const Tensor& x) { return project(t, ad::gather_rows(x, index, 0.5), 20); }, a}});
  }
  {
    Matrix tiny(1, 3);
    tiny << 2e-4, -1e-4, 3e-4;
    s.check("rodrigues", Cases{{[](Tape& t, const Tensor& x) { return project(t, ad::rodrigues(x), 21); }, randn(1, 3, rng, 0.8)},
                               {[](Tape& t, const Tensor& x) { return project(t, ad::rodrigues(x), 22); }, tiny}});
  }

  const HeadTemplate tmpl = make_default_template(7, 64, 4);
  const AvatarModel model = random_model(tmpl, 5);
  const Index p_dims = tmpl.param_dims();
  {
    const Matrix table = model.params[kEmotionTableName];
    Matrix e(1, kEmotionCategories);
    e << 0.3, 0.0, 0.7, 0.0, 0.0, 0.0;
    s.check("masked_token", Cases{{[e](Tape& t, const Tensor& x) { return project(t, masked_token(x, t.constant(e)), 23); }, table}});
    const Matrix p = randn(2, p_dims, rng, 0.3);
    s.check("synthesize_vertices", Cases{{[&tmpl](Tape& t, const Tensor& x) {
                                            const std::vector<Tensor> v = synthesize_vertices(t, tmpl, x);
                                            return ad::add(project(t, v[0], 24), project(t, v[1], 25));
                                          },
                                          p}});
  }

  // Branch-level checks: every weight of the branch in turn is the variable.
  const auto over_weights = [&](const std::function<bool(const std::string&)>& pick,
                                const std::function<Tensor(Tape&, const BoundParameters&)>& f) {
    Cases cases;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      const std::string pname = model.params.name(i);
      if (!pick(pname)) continue;
      cases.push_back({[&model, pname, f](Tape& t, const Tensor& x) {
                         BoundParameters w(t, model.params, none_trainable);
                         w.replace(pname, x);
                         return f(t, w);
                       },
                       model.params[pname]});
    }
    return cases;
  };
  const auto geo_side = [](const std::string& n) { return component_of(n) != "app"; };
  const auto app_side = [](const std::string& n) { return component_of(n) == "app"; };

  Matrix label(1, kEmotionCategories);
  label << 0.0, 0.0, 0.0, 0.6, 0.4, 0.0;
  const Matrix p_seq = randn(2, p_dims, rng, 0.3);
  const auto geo_forward = [&model, label](Tape& t, const BoundParameters& w, const Tensor& p) {
    const Tensor token = masked_token(w[kEmotionTableName], t.constant(label));
    return modulate_sequence(w, model.config.geo, p, token);
  };
  {
    const Matrix h = randn(3, model.config.geo.d_model, rng);
    const Matrix ctx = randn(kEmotionCategories, model.config.token_dim, rng);
    const int heads = model.config.geo.heads;
    s.check("conditioned_block",
            Cases{{[&model, ctx, heads](Tape& t, const Tensor& x) {
                     const BoundParameters w(t, model.params, none_trainable);
                     return project(t, conditioned_block(w, "geo.l0.", heads, x, t.constant(ctx)), 26);
                   },
                   h},
                  {[&model, h, heads](Tape& t, const Tensor& x) {
                     const BoundParameters w(t, model.params, none_trainable);
                     return project(t, conditioned_block(w, "geo.l0.", heads, t.constant(h), x), 26);
                   },
                   ctx}});
  }
  {
    Cases cases = over_weights(geo_side, [&](Tape& t, const BoundParameters& w) {
      return project(t, geo_forward(t, w, t.constant(p_seq)), 27);
    });
    cases.push_back({[&](Tape& t, const Tensor& x) {
                       const BoundParameters w(t, model.params, none_trainable);
                       return project(t, geo_forward(t, w, x), 27);
                     },
                     p_seq});
    s.check("geo_modulator", cases);
  }

  // Appearance path on one frame with a fixed splat assignment.
  Camera cam;
  cam.height = cam.width = 24;
  AvatarState reference{tmpl.mean_vertices, Matrix::Constant(tmpl.vertex_count(), 3, 0.5)};
  for (Index i = 0; i < tmpl.vertex_count(); ++i) reference.colors.row(i) += 0.1 * randn(1, 3, rng);
  const ReferenceSummary ref = summarize_reference(reference, tmpl);
  const Eigen::VectorXd p_frame = p_seq.row(0).transpose();
  const Matrix query = vertex_query_features(tmpl, p_frame);
  const std::vector<int> owner = rasterize(synthesize_vertices(tmpl, p_frame), cam).owner;
  const Matrix token = masked_token(model.params[kEmotionTableName], label.row(0).transpose());
  Matrix target = Matrix::Constant(static_cast<Index>(owner.size()), 3, 0.5);
  target += 0.2 * randn(target.rows(), 3, rng);
  const auto app_forward = [&](Tape&, const BoundParameters& w, const Tensor& colors_in, const Tensor& positions_in,
                               const Tensor& token_in) {
    const Tensor a = extract_features(w, colors_in, positions_in);
    const Tensor feats = concat_features(a, emotion_appearance_tokens(w, token_in));
    return decode_colors(w, model.config.app, feats, query, ref.skip_colors);
  };
  {
    s.check("extract_features", Cases{{[&](Tape& t, const Tensor& x) {
                                         const BoundParameters w(t, model.params, none_trainable);
                                         return project(t, extract_features(w, x, t.constant(ref.region_positions)), 28);
                                       },
                                       ref.region_colors}});
    s.check("emotion_appearance_tokens", Cases{{[&](Tape& t, const Tensor& x) {
                                                  const BoundParameters w(t, model.params, none_trainable);
                                                  return project(t, emotion_appearance_tokens(w, x), 29);
                                                },
                                                token}});
    Cases cases = over_weights(app_side, [&](Tape& t, const BoundParameters& w) {
      return project(t, app_forward(t, w, t.constant(ref.region_colors), t.constant(ref.region_positions), t.constant(token)), 30);
    });
    cases.push_back({[&](Tape& t, const Tensor& x) {
                       const BoundParameters w(t, model.params, none_trainable);
                       return project(t, app_forward(t, w, x, t.constant(ref.region_positions), t.constant(token)), 30);
                     },
                     ref.region_colors});
    s.check("app_modulator", cases);
  }
  {
    const Matrix colors = Matrix::Constant(tmpl.vertex_count(), 3, 0.5) + 0.2 * randn(tmpl.vertex_count(), 3, rng);
    s.check("shade", Cases{{[&owner](Tape& t, const Tensor& x) { return project(t, shade(x, owner), 31); }, colors}});
    s.check("app_loss", Cases{{[&owner, &target](Tape&, const Tensor& x) { return app_loss(shade(x, owner), target); }, colors}});
    s.check("app_loss[weights]", over_weights(app_side, [&](Tape& t, const BoundParameters& w) {
              const Tensor c =
                  app_forward(t, w, t.constant(ref.region_colors), t.constant(ref.region_positions), t.constant(token));
              return app_loss(shade(c, owner), target);
            }));
  }
  {
    const Matrix p_star = p_seq + randn(p_seq.rows(), p_seq.cols(), rng, 0.2);
    std::vector<Matrix> v_star;
    for (Index t = 0; t < p_star.rows(); ++t) v_star.push_back(synthesize_vertices(tmpl, Eigen::VectorXd(p_star.row(t).transpose())));
    const GeoLossWeights weights;
    s.check("geo_loss", Cases{{[&](Tape&, const Tensor& x) { return geo_loss(tmpl, x, p_star, v_star, weights); }, p_seq}});
    s.check("geo_loss[weights]", over_weights(geo_side, [&](Tape& t, const BoundParameters& w) {
              return geo_loss(tmpl, geo_forward(t, w, t.constant(p_seq)), p_star, v_star, weights);
            }));
  }
  return s.rows;
}

}  // namespace emo
