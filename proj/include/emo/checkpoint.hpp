#pragma once

// The full avatar model (emotion table + geometry branch + appearance branch)
// and its on-disk checkpoint. Geometry weights and the emotion table can be
// loaded without the appearance weights, so one geometry branch can drive
// appearance branches of different shapes.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "emo/app_modulator.hpp"
#include "emo/container.hpp"
#include "emo/emotion.hpp"
#include "emo/geo_modulator.hpp"
#include "emo/head_model.hpp"

namespace emo {

struct ModelConfig {
  int expression_dims = 16;
  int token_dim = 32;
  GeoModulatorConfig geo;
  AppModulatorConfig app;

  /// Copies E + 3 and D into the branch configs and validates them.
  void resolve();
  json to_json() const;
  static ModelConfig from_json(const json& j);
};

inline constexpr std::string_view kEmotionTableName = "emotion.table";

struct AvatarModel {
  ModelConfig config;
  ParameterSet params;
  std::set<std::string> components;  // subset of {"emotion", "geo", "app"}

  /// Zero-initialised heads: the fresh model is the identity on geometry and
  /// returns the reference's region colours.
  static AvatarModel initialize(ModelConfig cfg, std::uint64_t seed);

  bool has(std::string_view component) const { return components.contains(std::string(component)); }

  /// T = E diag(e), D x N.
  Matrix token(const Eigen::Ref<const VectorXd>& e) const;
  Matrix token(Emotion e) const { return token(encode_label(e)); }

  /// g(p, T) per frame; `identity_geometry` bypasses the branch (ablation).
  Matrix modulate(const Matrix& p_seq, const Matrix& token, bool identity_geometry = false) const;
  /// Per-vertex colours for one frame of modulated parameters.
  Matrix colors(const HeadTemplate& tmpl, const ReferenceSummary& ref, const Eigen::Ref<const VectorXd>& p, const Matrix& token) const;
};

/// Every name under one component: "emotion" -> emotion.table, "geo" -> geo.*, "app" -> app.*.
std::string component_of(std::string_view parameter_name);

struct CheckpointInfo {
  std::uint64_t seed = 0;
  long step = 0;
  std::string dataset_hash;
  json train = json::object();  // echo of the training settings
};

inline constexpr std::string_view kCheckpointManifest = "ckpt.json";
inline constexpr std::string_view kCheckpointBlob = "ckpt.f32";

void save_checkpoint(const AvatarModel& model, const CheckpointInfo& info, const std::filesystem::path& dir);
/// Throws LoadError for a missing or malformed checkpoint.
AvatarModel load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);
/// Checkpoint bytes hashed the same way as datasets.
std::uint64_t checkpoint_hash(const AvatarModel& model, const CheckpointInfo& info);

/// Copies the emotion table and geometry weights of `geo_source` into `target`.
/// Throws ConfigMismatch naming the first disagreeing field when E, D, N or
/// the geometry shape differ.
void adopt_geometry(AvatarModel& target, const AvatarModel& geo_source);

/// Throws ConfigMismatch unless the model was built for this template.
void require_compatible(const AvatarModel& model, const HeadTemplate& tmpl);

}  // namespace emo
