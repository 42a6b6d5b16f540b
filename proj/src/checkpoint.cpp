#include "emo/checkpoint.hpp"

#include <string>

#include "emo/errors.hpp"
#include "emo/rng.hpp"

namespace emo {

namespace {

constexpr std::uint64_t kEmotionInit = 11;
constexpr std::uint64_t kGeoInit = 12;
constexpr std::uint64_t kAppInit = 13;

void mismatch(const std::string& field, long have, long want) {
  throw ConfigMismatch("config mismatch on " + field + ": checkpoint has " + std::to_string(have) + ", expected " +
                       std::to_string(want));
}

}  // namespace

void ModelConfig::resolve() {
  geo.param_dims = expression_dims + 3;
  geo.token_dim = token_dim;
  app.token_dim = token_dim;
  if (expression_dims < 1 || token_dim < 1) throw DimensionError("model: expression_dims and token_dim must be positive");
  geo.validate();
  app.validate();
}

json ModelConfig::to_json() const {
  return {{"expression_dims", expression_dims},
          {"token_dim", token_dim},
          {"emotion_categories", kEmotionCategories},
          {"geo", {{"layers", geo.layers}, {"d_model", geo.d_model}, {"group_size", geo.group_size}, {"heads", geo.heads}, {"ff", geo.ff}}},
          {"app", {{"layers", app.layers}, {"heads", app.heads}, {"ff", app.ff}}}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.expression_dims = j.at("expression_dims").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    if (j.at("emotion_categories").get<int>() != kEmotionCategories) {
      throw ConfigMismatch("config mismatch on emotion_categories");
    }
    const json& g = j.at("geo");
    c.geo.layers = g.at("layers").get<int>();
    c.geo.d_model = g.at("d_model").get<int>();
    c.geo.group_size = g.at("group_size").get<int>();
    c.geo.heads = g.at("heads").get<int>();
    c.geo.ff = g.at("ff").get<int>();
    const json& a = j.at("app");
    c.app.layers = a.at("layers").get<int>();
    c.app.heads = a.at("heads").get<int>();
    c.app.ff = a.at("ff").get<int>();
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::bad_manifest, std::string("model config: ") + e.what());
  }
  c.resolve();
  return c;
}

AvatarModel AvatarModel::initialize(ModelConfig cfg, std::uint64_t seed) {
  cfg.resolve();
  AvatarModel m;
  m.config = cfg;
  Rng emotion_rng(mix_seed(seed, kEmotionInit));
  m.params.add(std::string(kEmotionTableName), EmotionTable::initialize(cfg.token_dim, emotion_rng).embedding);
  Rng geo_rng(mix_seed(seed, kGeoInit));
  init_geo_parameters(m.params, cfg.geo, geo_rng);
  Rng app_rng(mix_seed(seed, kAppInit));
  init_app_parameters(m.params, cfg.app, app_rng);
  // stored at f32 from the start, so untrained components read back unchanged
  m.params.quantize_to_float();
  m.components = {"emotion", "geo", "app"};
  return m;
}

Matrix AvatarModel::token(const Eigen::Ref<const VectorXd>& e) const { return masked_token(params[kEmotionTableName], e); }

Matrix AvatarModel::modulate(const Matrix& p_seq, const Matrix& tok, bool identity_geometry) const {
  if (identity_geometry) return p_seq;
  return modulate_sequence(params, config.geo, p_seq, tok);
}

Matrix AvatarModel::colors(const HeadTemplate& tmpl, const ReferenceSummary& ref, const Eigen::Ref<const VectorXd>& p,
                           const Matrix& tok) const {
  ad::Tape tape;
  const BoundParameters w(tape, params, none_trainable);
  const ad::Tensor a = extract_features(w, tape.constant(ref.region_colors), tape.constant(ref.region_positions));
  const ad::Tensor a_e = emotion_appearance_tokens(w, tape.constant(tok));
  return decode_colors(w, config.app, concat_features(a, a_e), vertex_query_features(tmpl, p), ref.skip_colors).value();
}

std::string component_of(std::string_view name) {
  if (name == kEmotionTableName) return "emotion";
  if (name.starts_with("geo.")) return "geo";
  if (name.starts_with("app.")) return "app";
  throw ContractError("parameter " + std::string(name) + " belongs to no component");
}

namespace {

Container checkpoint_container(const AvatarModel& model, const CheckpointInfo& info) {
  Container c("checkpoint");
  json& h = c.header();
  h["model"] = model.config.to_json();
  h["seed"] = info.seed;
  h["step"] = info.step;
  h["dataset_hash"] = info.dataset_hash;
  h["train"] = info.train;
  h["components"] = model.components;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (model.has(component_of(model.params.name(i)))) c.put(model.params.name(i), model.params.value(i));
  }
  return c;
}

}  // namespace

void save_checkpoint(const AvatarModel& model, const CheckpointInfo& info, const std::filesystem::path& dir) {
  checkpoint_container(model, info).write(dir, kCheckpointManifest, kCheckpointBlob);
}

std::uint64_t checkpoint_hash(const AvatarModel& model, const CheckpointInfo& info) {
  return checkpoint_container(model, info).content_hash(kCheckpointBlob);
}

AvatarModel load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info) {
  const Container c = Container::read(dir, kCheckpointManifest, "checkpoint");
  const json& h = c.header();
  if (!h.contains("model") || !h.contains("components") || !h["components"].is_array()) {
    throw LoadError(LoadError::Kind::bad_manifest, "checkpoint header lacks model/components");
  }
  const ModelConfig cfg = ModelConfig::from_json(h["model"]);
  std::uint64_t seed = 0;
  try {
    seed = h.at("seed").get<std::uint64_t>();
    if (info) {
      info->seed = seed;
      info->step = h.at("step").get<long>();
      info->dataset_hash = h.at("dataset_hash").get<std::string>();
      info->train = h.at("train");
    }
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::bad_manifest, std::string("checkpoint header: ") + e.what());
  }
  // Start from a freshly initialised model so absent components keep their
  // initial values, then overwrite everything the checkpoint stores.
  AvatarModel m = AvatarModel::initialize(cfg, seed);
  m.components.clear();
  for (const json& comp : h["components"]) m.components.insert(comp.get<std::string>());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const std::string& name = m.params.name(i);
    if (!m.has(component_of(name))) continue;
    const Matrix& stored = c.get(name);
    Matrix& slot = m.params.value(i);
    if (stored.rows() != slot.rows() || stored.cols() != slot.cols()) {
      throw LoadError(LoadError::Kind::shape_mismatch, "checkpoint blob '" + name + "' does not match the model config");
    }
    slot = stored;
  }
  return m;
}

void adopt_geometry(AvatarModel& target, const AvatarModel& src) {
  if (!src.has("geo") || !src.has("emotion")) throw ConfigMismatch("config mismatch: checkpoint carries no geometry branch");
  const ModelConfig& a = src.config;
  const ModelConfig& b = target.config;
  if (a.expression_dims != b.expression_dims) mismatch("expression_dims", a.expression_dims, b.expression_dims);
  if (a.token_dim != b.token_dim) mismatch("token_dim", a.token_dim, b.token_dim);
  if (a.geo.layers != b.geo.layers) mismatch("geo.layers", a.geo.layers, b.geo.layers);
  if (a.geo.d_model != b.geo.d_model) mismatch("geo.d_model", a.geo.d_model, b.geo.d_model);
  if (a.geo.group_size != b.geo.group_size) mismatch("geo.group_size", a.geo.group_size, b.geo.group_size);
  if (a.geo.heads != b.geo.heads) mismatch("geo.heads", a.geo.heads, b.geo.heads);
  if (a.geo.ff != b.geo.ff) mismatch("geo.ff", a.geo.ff, b.geo.ff);
  for (std::size_t i = 0; i < target.params.size(); ++i) {
    const std::string& name = target.params.name(i);
    const std::string comp = component_of(name);
    if (comp == "geo" || comp == "emotion") target.params.value(i) = src.params[name];
  }
  target.components.insert("geo");
  target.components.insert("emotion");
}

void require_compatible(const AvatarModel& model, const HeadTemplate& tmpl) {
  if (model.config.expression_dims != tmpl.expression_dims()) {
    mismatch("expression_dims", model.config.expression_dims, static_cast<long>(tmpl.expression_dims()));
  }
}

}  // namespace emo
