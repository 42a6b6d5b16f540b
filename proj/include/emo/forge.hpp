#pragma once

// Synthetic emotion-consistent multi-identity corpus. Every anchor owns one
// speech track; each emotion variant is a closed-form affine map of it, so all
// variants are frame-synchronized by construction and the geometry target for
// any (source, target) pair has an exact oracle. Identities differ only in
// appearance: base colours plus a region-wise linear colour response to the
// emotion's appearance code.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "emo/container.hpp"
#include "emo/emotion.hpp"
#include "emo/head_model.hpp"

namespace emo {

struct ForgeConfig {
  std::uint64_t seed = 0;
  int vertices = 512;
  int expression_dims = 16;
  int anchors = 4;
  int heldout_anchors = 1;
  int identities = 32;
  int heldout_identities = 8;
  int frames = 64;
  int appearance_code_dim = 4;
  double kappa = 0.5;  // expression-magnitude gain on the colour response

  void validate() const;
};

struct EmotionMap {
  Matrix mixing;              // A_e, E x E
  VectorXd bias;              // b_e
  Vector3d jaw_bias = Vector3d::Zero();
  VectorXd appearance_code;   // u_e, D_a
};

struct IdentitySpec {
  int id = 0;
  std::uint64_t seed = 0;
  Matrix base_colors;  // V x 3
  Matrix response;     // (K * 3) x D_a; rows 3r..3r+2 belong to region r

  /// Colour delta of region r for appearance code u (3-vector).
  Vector3d region_delta(int region, const Eigen::Ref<const VectorXd>& u) const;
};

struct AnchorRecord {
  int anchor_id = 0;
  std::uint64_t seed = 0;
  Matrix speech;  // F x E
  Matrix jaw;     // F x 3
  double frame_rate = 30.0;
};

struct Splits {
  std::vector<int> train_identities, heldout_identities;
  std::vector<int> train_anchors, heldout_anchors;

  /// Throws LoadError(invalid_splits) on overlap or out-of-range ids.
  void validate(int identities, int anchors) const;
};

struct SampleRecord {
  int anchor = 0;
  int identity = 0;
  Emotion source = Emotion::neutral;
  Emotion target = Emotion::neutral;
  Matrix p_drv;   // F x (E+3)
  Matrix p_star;  // F x (E+3)
  std::vector<Matrix> target_vertices;
  std::vector<Matrix> target_colors;
};

/// Per-dimension sum of three sinusoids; periods in [8, F], amplitudes in
/// [0.1, 0.5], redrawn until the frame-to-frame step is provably below 0.5.
Matrix gen_speech_track(std::uint64_t seed, int frames, int dims);
/// Slow jaw opening around 0.12 rad with small off-axis wobble.
Matrix gen_jaw_track(std::uint64_t seed, int frames);
EmotionMap gen_emotion_map(std::uint64_t seed, Emotion e, int expression_dims, int appearance_code_dim);
/// exp' = A exp + b, jaw' = jaw + jaw_bias, per frame; F x (E+3).
Matrix apply_emotion(const Matrix& speech, const Matrix& jaw, const EmotionMap& map);
/// A^-1 (exp' - b) per frame, F x E.
Matrix recover_speech(const Matrix& p_seq, const EmotionMap& map);
IdentitySpec gen_identity(std::uint64_t seed, int id, const HeadTemplate& tmpl, const Matrix& prototype);
/// (K * 3) x D_a shared appearance prototype that identities rescale.
Matrix gen_appearance_prototype(std::uint64_t seed, int appearance_code_dim);

struct Dataset {
  ForgeConfig config;
  HeadTemplate tmpl;
  std::array<EmotionMap, 7> maps;
  Matrix appearance_prototype;
  std::vector<AnchorRecord> anchors;
  std::vector<IdentitySpec> identities;
  Splits splits;

  const EmotionMap& map(Emotion e) const { return maps[static_cast<std::size_t>(e)]; }
  Index param_dims() const { return tmpl.param_dims(); }
  std::size_t sequence_records() const { return anchors.size() * kAllEmotions.size() * identities.size(); }

  /// Parameters of anchor `a` under emotion e, F x (E+3).
  Matrix emotion_sequence(int anchor, Emotion e) const;
  /// c* for one frame given the target expression coefficients.
  Matrix target_colors(int identity, Emotion target, const Eigen::Ref<const VectorXd>& exp) const;
  /// Neutral reference: rest mesh with the identity's base colours.
  AvatarState reference(int identity) const;
};

Dataset forge_dataset(const ForgeConfig& cfg);

/// Full record including per-frame target vertices and colours.
SampleRecord synthesize_sample(const Dataset& data, int anchor, int identity, Emotion source, Emotion target);

struct SyncReport {
  double max_error = 0.0;  // largest disagreement between recovered speech tracks
  bool passed = false;
};
/// Recovers the speech track from every emotion variant of every anchor and
/// compares all of them against each other and against the stored track.
SyncReport check_synchronization(const Dataset& data, double tolerance = 1e-10);

Container to_container(const Dataset& data);
Dataset from_container(const Container& c);

inline constexpr std::string_view kDatasetManifest = "manifest.json";
inline constexpr std::string_view kDatasetBlob = "data.f32";

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);
/// FNV-1a of the dataset as it would be written.
std::uint64_t dataset_hash(const Dataset& data);
/// FNV-1a of an existing dataset directory's files; throws LoadError if absent.
std::uint64_t dataset_dir_hash(const std::filesystem::path& dir);

}  // namespace emo
