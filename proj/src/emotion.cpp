#include "emo/emotion.hpp"

#include <algorithm>
#include <cmath>

#include "emo/errors.hpp"

namespace emo {

std::string_view emotion_name(Emotion e) {
  switch (e) {
    case Emotion::angry: return "angry";
    case Emotion::disgust: return "disgust";
    case Emotion::fear: return "fear";
    case Emotion::happy: return "happy";
    case Emotion::sad: return "sad";
    case Emotion::surprised: return "surprised";
    case Emotion::neutral: return "neutral";
  }
  return "neutral";
}

std::optional<Emotion> parse_emotion(std::string_view name) {
  for (Emotion e : kAllEmotions) {
    if (emotion_name(e) == name) return e;
  }
  return std::nullopt;
}

std::string emotion_names_list() {
  std::string out;
  for (Emotion e : kAllEmotions) {
    if (!out.empty()) out += ", ";
    out += emotion_name(e);
  }
  return out;
}

VectorXd encode_label(Emotion e) {
  VectorXd v = VectorXd::Zero(kEmotionCategories);
  if (e != Emotion::neutral) v(static_cast<int>(e)) = 1.0;
  return v;
}

EmotionTable EmotionTable::initialize(int token_dim, Rng& rng) {
  EmotionTable t;
  t.embedding.resize(token_dim, kEmotionCategories);
  const double sd = 1.0 / std::sqrt(static_cast<double>(token_dim));
  for (Index i = 0; i < t.embedding.size(); ++i) t.embedding.data()[i] = sd * rng.normal();
  return t;
}

namespace {

// Equal endpoints stay put, so a label shared by both ends keeps its exact
// value and masking commutes with interpolation bit for bit.
double lerp_exact(double x, double y, double alpha) { return x == y ? x : (1.0 - alpha) * x + alpha * y; }

}  // namespace

Matrix masked_token(const Matrix& table, const Eigen::Ref<const VectorXd>& e) {
  if (e.size() != table.cols()) {
    throw DimensionError("masked_token: emotion vector has " + std::to_string(e.size()) + " entries, table has " +
                         std::to_string(table.cols()) + " columns");
  }
  return (table.array().rowwise() * e.transpose().array()).matrix();
}

ad::Tensor masked_token(const ad::Tensor& table, const ad::Tensor& e_row) {
  if (e_row.rows() != 1 || e_row.cols() != table.cols()) {
    throw DimensionError("masked_token: emotion row " + e_row.shape_string() + " does not match table " + table.shape_string());
  }
  return ad::mul_rowwise(table, e_row);
}

VectorXd interpolate_emotions(const Eigen::Ref<const VectorXd>& e1, const Eigen::Ref<const VectorXd>& e2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("interpolate_emotions: alpha must lie in [0, 1]");
  if (e1.size() != e2.size()) throw DimensionError("interpolate_emotions: vectors differ in length");
  return e1.binaryExpr(e2, [alpha](double x, double y) { return lerp_exact(x, y, alpha); });
}

Matrix lerp_tokens(const Matrix& t1, const Matrix& t2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("lerp_tokens: alpha must lie in [0, 1]");
  if (t1.rows() != t2.rows() || t1.cols() != t2.cols()) throw DimensionError("lerp_tokens: token shapes differ");
  return t1.binaryExpr(t2, [alpha](double x, double y) { return lerp_exact(x, y, alpha); });
}

VectorXd emotion_path(const std::vector<VectorXd>& waypoints, double s) {
  if (waypoints.size() < 2) throw DomainError("emotion_path: need at least two waypoints");
  if (!(s >= 0.0 && s <= 1.0)) throw RangeError("emotion_path: s must lie in [0, 1]");
  const auto segments = static_cast<double>(waypoints.size() - 1);
  const double pos = s * segments;
  const auto seg = std::min(static_cast<std::size_t>(std::floor(pos)), waypoints.size() - 2);
  const double alpha = std::min(pos - static_cast<double>(seg), 1.0);
  return interpolate_emotions(waypoints[seg], waypoints[seg + 1], alpha);
}

}  // namespace emo
