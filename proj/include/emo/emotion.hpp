#pragma once

// Explicit emotion signal: label encoding, the learnable D x N embedding table,
// the masked token T = E diag(e), and interpolation in label space.

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emo/autodiff.hpp"
#include "emo/rng.hpp"

namespace emo {

using Matrix = ad::Matrix;
using Eigen::Index;
using Eigen::VectorXd;

enum class Emotion : int { angry = 0, disgust, fear, happy, sad, surprised, neutral };

/// Non-neutral categories; neutral is the origin of the token space.
inline constexpr int kEmotionCategories = 6;

inline constexpr std::array<Emotion, 7> kAllEmotions{Emotion::angry, Emotion::disgust,   Emotion::fear,   Emotion::happy,
                                                     Emotion::sad,   Emotion::surprised, Emotion::neutral};

std::string_view emotion_name(Emotion e);
std::optional<Emotion> parse_emotion(std::string_view name);
/// "angry, disgust, ..." for error messages.
std::string emotion_names_list();

/// One-hot over the six non-neutral categories; neutral maps to the zero vector.
VectorXd encode_label(Emotion e);

struct EmotionTable {
  Matrix embedding;  // D x N

  Index token_dim() const { return embedding.rows(); }
  /// Entries i.i.d. normal with standard deviation 1/sqrt(D).
  static EmotionTable initialize(int token_dim, Rng& rng);
};

/// T[:, j] = e_j * E[:, j].
Matrix masked_token(const Matrix& table, const Eigen::Ref<const VectorXd>& e);
/// Same arithmetic on a tape; `e_row` is 1 x N.
ad::Tensor masked_token(const ad::Tensor& table, const ad::Tensor& e_row);

/// (1 - alpha) e1 + alpha e2; alpha outside [0, 1] throws RangeError.
VectorXd interpolate_emotions(const Eigen::Ref<const VectorXd>& e1, const Eigen::Ref<const VectorXd>& e2, double alpha);
Matrix lerp_tokens(const Matrix& t1, const Matrix& t2, double alpha);

/// Piecewise-linear path through the waypoints, s in [0, 1]. Waypoints are
/// hit exactly at s = k / (n - 1).
VectorXd emotion_path(const std::vector<VectorXd>& waypoints, double s);

}  // namespace emo
