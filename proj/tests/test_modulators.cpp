#include <doctest.h>

#include "emo/app_modulator.hpp"
#include "emo/checkpoint.hpp"
#include "emo/errors.hpp"
#include "emo/geo_modulator.hpp"
#include "helpers.hpp"

using namespace emo;

namespace {

const HeadTemplate& small_template() {
  static const HeadTemplate t = make_default_template(3, 96, 4);
  return t;
}

AvatarState reference_of(const HeadTemplate& t, Rng& rng) {
  AvatarState s{t.mean_vertices, Matrix::Constant(t.vertex_count(), 3, 0.5)};
  s.colors += test::randn(t.vertex_count(), 3, rng, 0.1);
  return s;
}

}  // namespace

TEST_CASE("fresh geometry branch is the identity for any token") {
  for (int g : {0, 4, 3}) {
    ModelConfig cfg = test::small_config();
    cfg.geo.group_size = g;
    const AvatarModel m = AvatarModel::initialize(cfg, 1);
    Rng rng(2);
    const Matrix p = test::randn(5, 7, rng);
    const Matrix tok = test::randn(8, 6, rng);
    CHECK(m.modulate(p, tok) == p);
  }
}

TEST_CASE("neutral token leaves parameters untouched for any weights") {
  for (int g : {0, 4}) {
    ModelConfig cfg = test::small_config();
    cfg.geo.group_size = g;
    AvatarModel m = AvatarModel::initialize(cfg, 3);
    test::perturb(m, 4, 0.5);
    Rng rng(5);
    const Matrix p = test::randn(6, 7, rng);
    const Matrix out = m.modulate(p, m.token(Emotion::neutral));
    CHECK(out == p);
    // and a non-neutral token does move them once the head is non-zero
    CHECK((m.modulate(p, m.token(Emotion::happy)) - p).norm() > 1e-3);
  }
}

TEST_CASE("sequence modulation is per frame") {
  AvatarModel m = AvatarModel::initialize(test::small_config(), 6);
  test::perturb(m, 7);
  Rng rng(8);
  const Matrix p = test::randn(5, 7, rng);
  const Matrix tok = m.token(Emotion::sad);
  const Matrix out = m.modulate(p, tok);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 7);
  for (Index t = 0; t < 5; ++t) {
    const VectorXd one = modulate(m.params, m.config.geo, p.row(t).transpose(), tok);
    CHECK(one.transpose() == out.row(t));
  }
  const Matrix constant = p.row(2).replicate(4, 1);
  const Matrix cout = m.modulate(constant, tok);
  for (Index t = 1; t < 4; ++t) CHECK(cout.row(t) == cout.row(0));

  Matrix perm(5, 7);
  const int order[] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) perm.row(i) = p.row(order[i]);
  const Matrix pout = m.modulate(perm, tok);
  for (int i = 0; i < 5; ++i) CHECK(pout.row(i) == out.row(order[i]));
}

TEST_CASE("geometry branch input validation") {
  const AvatarModel m = AvatarModel::initialize(test::small_config(), 9);
  Rng rng(1);
  CHECK_THROWS_AS(m.modulate(test::randn(2, 6, rng), m.token(Emotion::sad)), DimensionError);
  CHECK_THROWS_AS(m.modulate(test::randn(2, 7, rng), test::randn(7, 6, rng)), DimensionError);
  Matrix bad = test::randn(2, 7, rng);
  bad(1, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(m.modulate(bad, m.token(Emotion::sad)), DomainError);
  GeoModulatorConfig cfg;
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
}

TEST_CASE("group sizes tokenise with padding") {
  GeoModulatorConfig cfg;
  cfg.param_dims = 19;
  CHECK(cfg.token_count() == 1);
  cfg.group_size = 4;
  CHECK(cfg.token_count() == 5);
  cfg.group_size = 19;
  CHECK(cfg.token_count() == 1);
}

TEST_CASE("identity features") {
  const HeadTemplate& t = small_template();
  AvatarModel m = AvatarModel::initialize(test::small_config(), 10);
  Rng rng(11);
  const AvatarState r = reference_of(t, rng);
  const AvatarState r2 = r;
  CHECK(extract_features(m.params, r, t) == extract_features(m.params, r2, t));

  // uniform grey: tokens differ only through the position encoding
  AvatarState grey{t.mean_vertices, Matrix::Constant(t.vertex_count(), 3, 0.5)};
  const ReferenceSummary s = summarize_reference(grey, t);
  for (Index k = 1; k < s.region_colors.rows(); ++k) CHECK(s.region_colors.row(k) == s.region_colors.row(0));
  AvatarModel no_pos = m;
  for (std::size_t i = 0; i < no_pos.params.size(); ++i) {
    if (no_pos.params.name(i).find("pos") != std::string::npos) no_pos.params.value(i).setZero();
  }
  const Matrix f = extract_features(no_pos.params, grey, t);
  for (Index k = 1; k < f.rows(); ++k) CHECK((f.row(k) - f.row(0)).cwiseAbs().maxCoeff() < 1e-15);

  AvatarState wrong = r;
  wrong.colors = Matrix::Zero(5, 3);
  CHECK_THROWS_AS(extract_features(m.params, wrong, t), DimensionError);
}

TEST_CASE("emotion appearance tokens") {
  AvatarModel m = AvatarModel::initialize(test::small_config(), 12);
  const Matrix zero = emotion_appearance_tokens(m.params, Matrix::Zero(8, 6));
  CHECK(zero.rows() == 6);
  CHECK(zero == Matrix::Zero(6, 8));
  const Matrix tok = m.token(Emotion::fear) + m.token(Emotion::happy);
  const Matrix one = emotion_appearance_tokens(m.params, tok);
  const Matrix two = emotion_appearance_tokens(m.params, Matrix(2.0 * tok));
  CHECK((two - 2.0 * one).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix h = emotion_appearance_tokens(m.params, m.token(Emotion::happy));
  const Matrix s = emotion_appearance_tokens(m.params, m.token(Emotion::sad));
  CHECK(h.row(3) != s.row(3));
  CHECK(h.row(4) != s.row(4));
  CHECK_THROWS_AS(emotion_appearance_tokens(m.params, Matrix::Zero(7, 6)), DimensionError);
}

TEST_CASE("concatenation") {
  Rng rng(13);
  const Matrix a = test::randn(6, 8, rng), ae = test::randn(6, 8, rng);
  const Matrix c = concat_features(a, ae);
  CHECK(c.rows() == 12);
  CHECK(c.topRows(6) == a);
  CHECK(c.bottomRows(6) == ae);
  CHECK_THROWS_AS(concat_features(a, test::randn(6, 7, rng)), DimensionError);
}

TEST_CASE("decoder identities") {
  const HeadTemplate& t = small_template();
  Rng rng(14);
  const AvatarState reference = reference_of(t, rng);
  const ReferenceSummary ref = summarize_reference(reference, t);
  const VectorXd p = test::randn(7, 1, rng, 0.3);
  AvatarModel fresh = AvatarModel::initialize(test::small_config(), 15);
  // zero-initialised head: skip colours
  CHECK(fresh.colors(t, ref, p, fresh.token(Emotion::angry)) == ref.skip_colors);

  AvatarModel m = fresh;
  test::perturb(m, 16);
  const Matrix neutral = m.colors(t, ref, p, m.token(Emotion::neutral));
  const Matrix a = extract_features(m.params, reference, t);
  const Matrix explicit_zero = decode_colors(m.params, m.config.app, concat_features(a, Matrix::Zero(6, 8)), vertex_query_features(t, p), ref.skip_colors);
  CHECK((neutral - explicit_zero).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(neutral.minCoeff() >= 0.0);
  CHECK(neutral.maxCoeff() <= 1.0);
  // the neutral decode does not see the emotion table at all
  AvatarModel other_table = m;
  other_table.params[kEmotionTableName] *= -3.0;
  CHECK(other_table.colors(t, ref, p, other_table.token(Emotion::neutral)) == neutral);
  CHECK((m.colors(t, ref, p, m.token(Emotion::sad)) - neutral).norm() > 1e-6);
}

TEST_CASE("query features") {
  const HeadTemplate& t = small_template();
  VectorXd p = VectorXd::Zero(7);
  const Matrix q0 = vertex_query_features(t, p);
  CHECK(q0.rows() == t.vertex_count());
  CHECK(q0.cols() == kQueryFeatures);
  CHECK(q0.leftCols(3) == t.mean_vertices);
  CHECK(q0.rightCols(2).isZero(0.0));
  p(0) = 1.0;
  const Matrix q1 = vertex_query_features(t, p);
  CHECK(q1.rightCols(2).maxCoeff() > 0.0);
  CHECK(q1.leftCols(3 + kRegionCount) == q0.leftCols(3 + kRegionCount));
  CHECK_THROWS_AS(vertex_query_features(t, VectorXd::Zero(6)), DimensionError);
}
