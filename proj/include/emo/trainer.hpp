#pragma once

// Losses, Adam, the staged (geometry, then appearance) and joint training
// loops, held-out evaluation and the three-way ablation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emo/checkpoint.hpp"
#include "emo/forge.hpp"
#include "emo/render.hpp"

namespace emo {

struct GeoLossWeights {
  double lambda_param = 1.0;
  double lambda_surf = 1.0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int geo_steps = 2000;
  int app_steps = 600;
  int records_per_step = 8;
  AdamConfig adam;
  GeoLossWeights weights;
  int app_frames_per_record = 2;
  int eval_every = 100;
  std::string mode = "staged";  // or "joint"
  std::vector<Emotion> source_emotions{Emotion::neutral};
  Camera camera;

  void validate() const;
  json to_json() const;
};

/// Mean over frames of lambda_param |p~ - p*|^2 + lambda_surf |V(p~) - V*|^2.
/// `target_vertices` holds V* per frame.
ad::Tensor geo_loss(const HeadTemplate& tmpl, const ad::Tensor& p_tilde, const Matrix& p_star,
                    const std::vector<Matrix>& target_vertices, const GeoLossWeights& weights);
double geo_loss(const HeadTemplate& tmpl, const Matrix& p_tilde, const Matrix& p_star, const GeoLossWeights& weights);

/// Mean squared pixel error; gradients reach the shaded pixels only.
ad::Tensor app_loss(const ad::Tensor& rendered_pixels, const Matrix& target_pixels);
double app_loss(const Raster& rendered, const Raster& target);

struct OptimizerState {
  AdamConfig hp;
  long step = 0;
  std::vector<Matrix> m, v;

  static OptimizerState for_params(const ParameterSet& params, const AdamConfig& hp);
};

/// Bias-corrected Adam update. An empty gradient matrix marks a frozen
/// parameter. A non-finite gradient throws DomainError naming the parameter.
void adam_step(OptimizerState& state, ParameterSet& params, const std::vector<Matrix>& grads);

struct LossPoint {
  long step;
  std::string split;
  std::string loss_name;
  double value;
};

struct LossCurve {
  std::vector<LossPoint> points;

  void add(long step, std::string split, std::string name, double value) {
    points.push_back({step, std::move(split), std::move(name), value});
  }
  /// "step,split,loss_name,value" with a header line.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  /// Values for one (split, loss) series in step order.
  std::vector<double> series(std::string_view split, std::string_view loss_name) const;
};

enum class Split { train, heldout };
std::string_view split_name(Split s);

struct GeoRecord {
  int anchor;
  Emotion source, target;
};
struct AppRecord {
  int anchor, identity;
  Emotion source, target;
};
std::vector<GeoRecord> geo_records(const Dataset& data, Split split, const std::vector<Emotion>& sources);
std::vector<AppRecord> app_records(const Dataset& data, Split split, const std::vector<Emotion>& sources);

struct AppOptions {
  bool zero_emotion = false;       // a_e forced to zero (no emotion in the appearance path)
  bool identity_geometry = false;  // geometry branch bypassed
};

struct TrainResult {
  AvatarModel model;
  LossCurve curve;
  long steps = 0;
};

/// Trains the emotion table and the geometry branch from zero-initialised heads.
TrainResult train_geo(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed);
/// Trains the appearance weights of `start` with geometry and emotion table frozen.
TrainResult train_app(const Dataset& data, AvatarModel start, const TrainConfig& tc, std::uint64_t seed, const AppOptions& opt = {});
/// Both objectives every step, gradients summed.
TrainResult train_joint(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed);

/// Mean geo_loss over the split's geometry records.
double mean_geo_loss(const AvatarModel& model, const Dataset& data, Split split, const TrainConfig& tc);

struct EvalOptions {
  int frame_stride = 8;      // appearance metrics use every n-th frame
  int max_identities = 8;    // per split, first ids of the split
  std::vector<Emotion> sources;  // empty = all seven
  std::vector<Split> splits{Split::train, Split::heldout};
  bool identity_geometry = false;
  bool zero_emotion = false;
  GeoLossWeights weights;
  Camera camera;
};

struct PairMetrics {
  double psnr = 0, ssim = 0, aed = 0, apd = 0, vertex_rmse = 0, geo_loss = 0, app_loss = 0;
  double baseline_aed = 0;  // AED of the unmodulated driving parameters
  int count = 0;

  void accumulate(const PairMetrics& other);
  PairMetrics mean() const;
  json to_json() const;
};

struct EvalReport {
  // split -> "src->tgt" -> metrics
  std::map<std::string, std::map<std::string, PairMetrics>> pairs;
  std::map<std::string, PairMetrics> overall;
  std::map<std::string, std::map<std::string, PairMetrics>> by_source;

  json to_json() const;
};

EvalReport evaluate(const AvatarModel& model, const Dataset& data, const EvalOptions& opt);

struct AblationVariant {
  std::string name;
  double geo_loss = 0, app_loss = 0, aed = 0, baseline_aed = 0;
};

struct AblationReport {
  std::vector<AblationVariant> variants;
  std::optional<AvatarModel> full_model;

  const AblationVariant& get(std::string_view name) const;
  json to_json() const;
};

/// full / wo_geom / wo_app, held-out metrics. A trained geometry model may be
/// passed in to skip retraining it.
AblationReport run_ablation(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed,
                            const EvalOptions& eval, const AvatarModel* trained_geo = nullptr);

}  // namespace emo
