#include "emo/config.hpp"

#include <fstream>

#include "emo/errors.hpp"

namespace emo {

namespace {

json sources_json(const std::vector<Emotion>& sources) {
  json out = json::array();
  for (Emotion e : sources) out.push_back(emotion_name(e));
  return out;
}

// Recursively checks `doc` against `schema`, then writes the merged value into `out`.
void merge_checked(const json& schema, const json& doc, json& out, const std::string& path) {
  if (!doc.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + full + "'");
    const json& expected = schema[key];
    if (expected.is_object()) {
      merge_checked(expected, value, out[key], full);
      continue;
    }
    const bool ok = (expected.is_number_integer() && value.is_number_integer()) ||
                    (expected.is_number_float() && value.is_number()) || (expected.is_string() && value.is_string()) ||
                    (expected.is_array() && value.is_array()) || (expected.is_boolean() && value.is_boolean());
    if (!ok) throw ConfigError("config: '" + full + "' has the wrong type (expected like " + expected.dump() + ")");
    if (expected.is_number_integer() && expected.get<std::int64_t>() >= 0 && value.get<std::int64_t>() < 0) {
      throw ConfigError("config: '" + full + "' must be non-negative");
    }
    out[key] = value;
  }
}

Emotion emotion_or_throw(const std::string& name) {
  const auto e = parse_emotion(name);
  if (!e) throw ConfigError("config: unknown emotion '" + name + "' (valid: " + emotion_names_list() + ")");
  return *e;
}

}  // namespace

json RunConfig::defaults() {
  const RunConfig d;
  json j = d.to_json();
  return j;
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"template", {{"vertices", forge.vertices}, {"expression_dims", forge.expression_dims}}},
          {"emotion", {{"categories", kEmotionCategories}, {"token_dim", model.token_dim}}},
          {"dataset",
           {{"anchors", forge.anchors},
            {"heldout_anchors", forge.heldout_anchors},
            {"identities", forge.identities},
            {"heldout_identities", forge.heldout_identities},
            {"frames", forge.frames},
            {"appearance_code_dim", forge.appearance_code_dim},
            {"kappa", forge.kappa}}},
          {"geo",
           {{"layers", model.geo.layers},
            {"d_model", model.geo.d_model},
            {"group_size", model.geo.group_size},
            {"heads", model.geo.heads},
            {"ff", model.geo.ff}}},
          {"app", {{"layers", model.app.layers}, {"heads", model.app.heads}, {"ff", model.app.ff}}},
          {"train",
           {{"geo_steps", train.geo_steps},
            {"app_steps", train.app_steps},
            {"records_per_step", train.records_per_step},
            {"lr", train.adam.lr},
            {"beta1", train.adam.beta1},
            {"beta2", train.adam.beta2},
            {"eps", train.adam.eps},
            {"lambda_param", train.weights.lambda_param},
            {"lambda_surf", train.weights.lambda_surf},
            {"app_frames_per_record", train.app_frames_per_record},
            {"eval_every", train.eval_every},
            {"mode", train.mode},
            {"source_emotions", sources_json(train.source_emotions)}}},
          {"render",
           {{"resolution", train.camera.width}, {"extent", train.camera.extent_width}, {"splat_radius", train.camera.splat_radius}}},
          {"eval", {{"frame_stride", eval.frame_stride}, {"max_identities", eval.max_identities}}}};
}

RunConfig RunConfig::from_json(const json& doc, bool require_seed) {
  if (require_seed && !(doc.is_object() && doc.contains("seed"))) throw ConfigError("config: 'seed' is required");
  json merged = defaults();
  merge_checked(defaults(), doc, merged, "");

  RunConfig c;
  c.seed = merged["seed"].get<std::uint64_t>();
  c.forge.seed = c.seed;
  c.forge.vertices = merged["template"]["vertices"].get<int>();
  c.forge.expression_dims = merged["template"]["expression_dims"].get<int>();
  if (merged["emotion"]["categories"].get<int>() != kEmotionCategories) {
    throw ConfigError("config: emotion.categories must be " + std::to_string(kEmotionCategories));
  }
  const json& ds = merged["dataset"];
  c.forge.anchors = ds["anchors"].get<int>();
  c.forge.heldout_anchors = ds["heldout_anchors"].get<int>();
  c.forge.identities = ds["identities"].get<int>();
  c.forge.heldout_identities = ds["heldout_identities"].get<int>();
  c.forge.frames = ds["frames"].get<int>();
  c.forge.appearance_code_dim = ds["appearance_code_dim"].get<int>();
  c.forge.kappa = ds["kappa"].get<double>();

  c.model.expression_dims = c.forge.expression_dims;
  c.model.token_dim = merged["emotion"]["token_dim"].get<int>();
  const json& g = merged["geo"];
  c.model.geo.layers = g["layers"].get<int>();
  c.model.geo.d_model = g["d_model"].get<int>();
  c.model.geo.group_size = g["group_size"].get<int>();
  c.model.geo.heads = g["heads"].get<int>();
  c.model.geo.ff = g["ff"].get<int>();
  const json& a = merged["app"];
  c.model.app.layers = a["layers"].get<int>();
  c.model.app.heads = a["heads"].get<int>();
  c.model.app.ff = a["ff"].get<int>();

  const json& t = merged["train"];
  c.train.geo_steps = t["geo_steps"].get<int>();
  c.train.app_steps = t["app_steps"].get<int>();
  c.train.records_per_step = t["records_per_step"].get<int>();
  c.train.adam.lr = t["lr"].get<double>();
  c.train.adam.beta1 = t["beta1"].get<double>();
  c.train.adam.beta2 = t["beta2"].get<double>();
  c.train.adam.eps = t["eps"].get<double>();
  c.train.weights.lambda_param = t["lambda_param"].get<double>();
  c.train.weights.lambda_surf = t["lambda_surf"].get<double>();
  c.train.app_frames_per_record = t["app_frames_per_record"].get<int>();
  c.train.eval_every = t["eval_every"].get<int>();
  c.train.mode = t["mode"].get<std::string>();
  c.train.source_emotions.clear();
  for (const json& s : t["source_emotions"]) {
    if (!s.is_string()) throw ConfigError("config: train.source_emotions must list emotion names");
    c.train.source_emotions.push_back(emotion_or_throw(s.get<std::string>()));
  }

  const json& r = merged["render"];
  c.train.camera.width = c.train.camera.height = r["resolution"].get<int>();
  c.train.camera.extent_width = c.train.camera.extent_height = r["extent"].get<double>();
  c.train.camera.splat_radius = r["splat_radius"].get<double>();

  c.eval.frame_stride = merged["eval"]["frame_stride"].get<int>();
  c.eval.max_identities = merged["eval"]["max_identities"].get<int>();
  c.eval.camera = c.train.camera;
  c.eval.weights = c.train.weights;

  try {
    c.forge.validate();
    c.model.resolve();
    c.train.validate();
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.eval.frame_stride < 1 || c.eval.max_identities < 1) throw ConfigError("config: eval values must be positive");
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::missing_file, "cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return j;
}

}  // namespace emo
