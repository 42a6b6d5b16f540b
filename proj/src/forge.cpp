#include "emo/forge.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <string>

#include "emo/errors.hpp"
#include "emo/f32.hpp"
#include "emo/rng.hpp"

namespace emo {

namespace fs = std::filesystem;

namespace {

// Stream tags for mix_seed.
constexpr std::uint64_t kTemplateStream = 1;
constexpr std::uint64_t kEmotionStream = 2;
constexpr std::uint64_t kAnchorStream = 3;
constexpr std::uint64_t kJawStream = 4;
constexpr std::uint64_t kIdentityStream = 5;
constexpr std::uint64_t kPrototypeStream = 6;

double to_float(double v) { return round_f32(v); }
void round_to_float(Matrix& m) { round_f32_inplace(m); }

std::string emotion_blob(Emotion e, const char* field) { return "emotion." + std::string(emotion_name(e)) + "." + field; }
std::string anchor_blob(int a, const char* field) { return "anchor." + std::to_string(a) + "." + field; }
std::string identity_blob(int i, const char* field) { return "identity." + std::to_string(i) + "." + field; }

Matrix column(const VectorXd& v) { return Matrix(Eigen::Map<const Matrix>(v.data(), v.size(), 1)); }

}  // namespace

void ForgeConfig::validate() const {
  if (vertices < 64 || expression_dims < 4) throw DomainError("forge: need at least 64 vertices and 4 expression dims");
  if (frames < 8) throw DomainError("forge: need at least 8 frames");
  if (anchors < 2 || heldout_anchors < 1 || heldout_anchors >= anchors) {
    throw DomainError("forge: need at least one training and one held-out anchor");
  }
  if (identities < 2 || heldout_identities < 1 || heldout_identities >= identities) {
    throw DomainError("forge: need at least one training and one held-out identity");
  }
  if (appearance_code_dim < 1) throw DomainError("forge: appearance_code_dim must be positive");
  if (!(kappa >= 0.0)) throw DomainError("forge: kappa must be non-negative");
}

Vector3d IdentitySpec::region_delta(int region, const Eigen::Ref<const VectorXd>& u) const {
  return response.middleRows(3 * region, 3) * u;
}

void Splits::validate(int identities, int anchors) const {
  const auto check = [](const std::vector<int>& train, const std::vector<int>& held, int count, const char* what) {
    std::set<int> seen;
    for (int id : train) {
      if (id < 0 || id >= count) throw LoadError(LoadError::Kind::invalid_splits, std::string(what) + " id out of range");
      if (!seen.insert(id).second) throw LoadError(LoadError::Kind::invalid_splits, std::string(what) + " id listed twice");
    }
    for (int id : held) {
      if (id < 0 || id >= count) throw LoadError(LoadError::Kind::invalid_splits, std::string(what) + " id out of range");
      if (!seen.insert(id).second) {
        throw LoadError(LoadError::Kind::invalid_splits,
                        std::string(what) + " " + std::to_string(id) + " is in both the training and the held-out split");
      }
    }
    if (train.empty() || held.empty()) throw LoadError(LoadError::Kind::invalid_splits, std::string(what) + " split is empty");
  };
  check(train_identities, heldout_identities, identities, "identity");
  check(train_anchors, heldout_anchors, anchors, "anchor");
}

Matrix gen_speech_track(std::uint64_t seed, int frames, int dims) {
  if (frames < 8) throw DomainError("gen_speech_track: need at least 8 frames");
  Rng rng(seed);
  Matrix track = Matrix::Zero(frames, dims);
  for (int d = 0; d < dims; ++d) {
    // Redraw the dimension while its worst-case frame step sum 2 a sin(pi / P)
    // could reach 0.5; the free ranges alone allow steps up to ~1.2.
    std::array<double, 3> period{}, amp{}, phase{};
    double step_bound = 0.0;
    do {
      step_bound = 0.0;
      for (int k = 0; k < 3; ++k) {
        period[k] = rng.uniform(8.0, static_cast<double>(frames));
        amp[k] = rng.uniform(0.1, 0.5);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        step_bound += 2.0 * amp[k] * std::sin(std::numbers::pi / period[k]);
      }
    } while (step_bound >= 0.5);
    for (int k = 0; k < 3; ++k) {
      for (int t = 0; t < frames; ++t) track(t, d) += amp[k] * std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
    }
  }
  round_to_float(track);
  return track;
}

Matrix gen_jaw_track(std::uint64_t seed, int frames) {
  Rng rng(seed);
  Matrix jaw(frames, 3);
  jaw.col(0).setConstant(0.12);
  jaw.col(1).setZero();
  jaw.col(2).setZero();
  for (int c = 0; c < 3; ++c) {
    const int terms = c == 0 ? 2 : 1;
    for (int k = 0; k < terms; ++k) {
      const double period = rng.uniform(8.0, static_cast<double>(frames));
      const double amp = c == 0 ? rng.uniform(0.03, 0.08) : rng.uniform(0.005, 0.02);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int t = 0; t < frames; ++t) jaw(t, c) += amp * std::sin(2.0 * std::numbers::pi * t / period + phase);
    }
  }
  round_to_float(jaw);
  return jaw;
}

EmotionMap gen_emotion_map(std::uint64_t seed, Emotion e, int expression_dims, int appearance_code_dim) {
  EmotionMap m;
  m.mixing = Matrix::Identity(expression_dims, expression_dims);
  m.bias = VectorXd::Zero(expression_dims);
  m.appearance_code = VectorXd::Zero(appearance_code_dim);
  if (e == Emotion::neutral) return m;

  Rng rng(seed);
  // A = I + 0.2 Q with Q a unit-Frobenius normal matrix, so |A - I|_F = 0.2 and A stays invertible.
  Matrix q(expression_dims, expression_dims);
  for (Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  m.mixing += (0.2 / q.norm()) * q;
  for (int i = 0; i < expression_dims; ++i) m.bias(i) = rng.uniform(-0.4, 0.4);
  for (int c = 0; c < 3; ++c) m.jaw_bias(c) = rng.uniform(-0.05, 0.05);
  for (int i = 0; i < appearance_code_dim; ++i) m.appearance_code(i) = rng.normal();
  m.appearance_code.normalize();

  round_to_float(m.mixing);
  for (int i = 0; i < expression_dims; ++i) m.bias(i) = to_float(m.bias(i));
  for (int c = 0; c < 3; ++c) m.jaw_bias(c) = to_float(m.jaw_bias(c));
  for (int i = 0; i < appearance_code_dim; ++i) m.appearance_code(i) = to_float(m.appearance_code(i));
  return m;
}

Matrix apply_emotion(const Matrix& speech, const Matrix& jaw, const EmotionMap& map) {
  const Index e = map.mixing.rows();
  if (speech.cols() != e || jaw.cols() != 3 || speech.rows() != jaw.rows() || map.bias.size() != e) {
    throw DimensionError("apply_emotion: speech " + std::to_string(speech.rows()) + "x" + std::to_string(speech.cols()) +
                         ", jaw " + std::to_string(jaw.rows()) + "x" + std::to_string(jaw.cols()) + ", map over " +
                         std::to_string(e) + " dims");
  }
  Matrix out(speech.rows(), e + 3);
  for (Index t = 0; t < speech.rows(); ++t) {
    const VectorXd s = speech.row(t).transpose();
    out.row(t).head(e) = (map.mixing * s + map.bias).transpose();
    out.row(t).tail<3>() = (jaw.row(t).transpose() + map.jaw_bias).transpose();
  }
  return out;
}

Matrix recover_speech(const Matrix& p_seq, const EmotionMap& map) {
  const Index e = map.mixing.rows();
  if (p_seq.cols() < e) throw DimensionError("recover_speech: parameter rows shorter than the expression dims");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd(map.mixing));
  Matrix out(p_seq.rows(), e);
  for (Index t = 0; t < p_seq.rows(); ++t) {
    const VectorXd shifted = p_seq.row(t).head(e).transpose() - map.bias;
    out.row(t) = lu.solve(shifted).transpose();
  }
  return out;
}

Matrix gen_appearance_prototype(std::uint64_t seed, int appearance_code_dim) {
  Rng rng(seed);
  Matrix p(3 * kRegionCount, appearance_code_dim);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = 0.12 * rng.normal();
  round_to_float(p);
  return p;
}

IdentitySpec gen_identity(std::uint64_t seed, int id, const HeadTemplate& tmpl, const Matrix& prototype) {
  if (prototype.rows() != 3 * kRegionCount) throw DimensionError("gen_identity: prototype must have 3K rows");
  Rng rng(seed);
  IdentitySpec spec;
  spec.id = id;
  spec.seed = seed;

  // Skin tone + warm tint shared by the face, small per-region variation.
  const double tone = rng.uniform(0.3, 0.75);
  const double warmth = rng.uniform(0.0, 0.12);
  const Vector3d tint(warmth, 0.0, -0.8 * warmth);
  Matrix region_color(kRegionCount, 3);
  for (int r = 0; r < kRegionCount; ++r) {
    for (int c = 0; c < 3; ++c) region_color(r, c) = to_float(std::clamp(tone + tint(c) + rng.uniform(-0.06, 0.06), 0.2, 0.9));
  }
  const Index v = tmpl.vertex_count();
  spec.base_colors.resize(v, 3);
  for (Index i = 0; i < v; ++i) spec.base_colors.row(i) = region_color.row(static_cast<int>(tmpl.region_labels[static_cast<std::size_t>(i)]));

  // Darker skin shows a stronger colour response (gain 2 (1 - base)), so the
  // response is readable from the neutral reference alone.
  spec.response.resize(prototype.rows(), prototype.cols());
  for (int r = 0; r < kRegionCount; ++r) {
    for (int c = 0; c < 3; ++c) spec.response.row(3 * r + c) = 2.0 * (1.0 - region_color(r, c)) * prototype.row(3 * r + c);
  }
  round_to_float(spec.response);
  return spec;
}

Matrix Dataset::emotion_sequence(int anchor, Emotion e) const {
  const AnchorRecord& a = anchors.at(static_cast<std::size_t>(anchor));
  return apply_emotion(a.speech, a.jaw, map(e));
}

Matrix Dataset::target_colors(int identity, Emotion target, const Eigen::Ref<const VectorXd>& exp) const {
  const IdentitySpec& spec = identities.at(static_cast<std::size_t>(identity));
  const VectorXd& u = map(target).appearance_code;
  const double gain = 1.0 + config.kappa * exp.norm() / std::sqrt(static_cast<double>(exp.size()));
  Matrix delta(kRegionCount, 3);
  for (int r = 0; r < kRegionCount; ++r) delta.row(r) = (gain * spec.region_delta(r, u)).transpose();
  Matrix colors(spec.base_colors.rows(), 3);
  for (Index i = 0; i < colors.rows(); ++i) {
    const int r = static_cast<int>(tmpl.region_labels[static_cast<std::size_t>(i)]);
    for (int c = 0; c < 3; ++c) colors(i, c) = std::clamp(spec.base_colors(i, c) + delta(r, c), 0.0, 1.0);
  }
  return colors;
}

AvatarState Dataset::reference(int identity) const {
  return AvatarState{tmpl.mean_vertices, identities.at(static_cast<std::size_t>(identity)).base_colors};
}

Dataset forge_dataset(const ForgeConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  d.tmpl = make_default_template(mix_seed(cfg.seed, kTemplateStream), cfg.vertices, cfg.expression_dims);
  for (Emotion e : kAllEmotions) {
    d.maps[static_cast<std::size_t>(e)] =
        gen_emotion_map(mix_seed(cfg.seed, kEmotionStream, static_cast<std::uint64_t>(e)), e, cfg.expression_dims, cfg.appearance_code_dim);
  }
  d.appearance_prototype = gen_appearance_prototype(mix_seed(cfg.seed, kPrototypeStream), cfg.appearance_code_dim);
  for (int a = 0; a < cfg.anchors; ++a) {
    AnchorRecord rec;
    rec.anchor_id = a;
    rec.seed = mix_seed(cfg.seed, kAnchorStream, static_cast<std::uint64_t>(a));
    rec.speech = gen_speech_track(rec.seed, cfg.frames, cfg.expression_dims);
    rec.jaw = gen_jaw_track(mix_seed(cfg.seed, kJawStream, static_cast<std::uint64_t>(a)), cfg.frames);
    d.anchors.push_back(std::move(rec));
  }
  for (int i = 0; i < cfg.identities; ++i) {
    d.identities.push_back(gen_identity(mix_seed(cfg.seed, kIdentityStream, static_cast<std::uint64_t>(i)), i, d.tmpl, d.appearance_prototype));
  }
  for (int i = 0; i < cfg.identities; ++i) {
    (i < cfg.identities - cfg.heldout_identities ? d.splits.train_identities : d.splits.heldout_identities).push_back(i);
  }
  for (int a = 0; a < cfg.anchors; ++a) {
    (a < cfg.anchors - cfg.heldout_anchors ? d.splits.train_anchors : d.splits.heldout_anchors).push_back(a);
  }
  d.splits.validate(cfg.identities, cfg.anchors);
  return d;
}

SampleRecord synthesize_sample(const Dataset& data, int anchor, int identity, Emotion source, Emotion target) {
  if (anchor < 0 || anchor >= static_cast<int>(data.anchors.size())) throw RangeError("unknown anchor " + std::to_string(anchor));
  if (identity < 0 || identity >= static_cast<int>(data.identities.size())) {
    throw RangeError("unknown identity " + std::to_string(identity));
  }
  SampleRecord rec;
  rec.anchor = anchor;
  rec.identity = identity;
  rec.source = source;
  rec.target = target;
  rec.p_drv = data.emotion_sequence(anchor, source);
  rec.p_star = data.emotion_sequence(anchor, target);
  const Index e = data.tmpl.expression_dims();
  for (Index t = 0; t < rec.p_star.rows(); ++t) {
    const VectorXd p = rec.p_star.row(t).transpose();
    rec.target_vertices.push_back(synthesize_vertices(data.tmpl, p));
    rec.target_colors.push_back(data.target_colors(identity, target, p.head(e)));
  }
  return rec;
}

SyncReport check_synchronization(const Dataset& data, double tolerance) {
  SyncReport report;
  for (std::size_t a = 0; a < data.anchors.size(); ++a) {
    std::vector<Matrix> recovered;
    for (Emotion e : kAllEmotions) recovered.push_back(recover_speech(data.emotion_sequence(static_cast<int>(a), e), data.map(e)));
    for (std::size_t i = 0; i < recovered.size(); ++i) {
      report.max_error = std::max(report.max_error, (recovered[i] - data.anchors[a].speech).cwiseAbs().maxCoeff());
      for (std::size_t j = i + 1; j < recovered.size(); ++j) {
        report.max_error = std::max(report.max_error, (recovered[i] - recovered[j]).cwiseAbs().maxCoeff());
      }
    }
  }
  report.passed = report.max_error < tolerance;
  return report;
}

Container to_container(const Dataset& data) {
  Container c("dataset");
  const ForgeConfig& cfg = data.config;
  json& h = c.header();
  h["config"] = {{"seed", cfg.seed},
                 {"vertices", cfg.vertices},
                 {"expression_dims", cfg.expression_dims},
                 {"anchors", cfg.anchors},
                 {"heldout_anchors", cfg.heldout_anchors},
                 {"identities", cfg.identities},
                 {"heldout_identities", cfg.heldout_identities},
                 {"frames", cfg.frames},
                 {"appearance_code_dim", cfg.appearance_code_dim},
                 {"kappa", cfg.kappa}};
  h["counts"] = {{"anchors", data.anchors.size()},
                 {"identities", data.identities.size()},
                 {"emotions", kAllEmotions.size()},
                 {"frames", cfg.frames},
                 {"sequence_records", data.sequence_records()}};
  json names = json::array();
  for (Emotion e : kAllEmotions) names.push_back(emotion_name(e));
  h["emotions"] = names;
  h["splits"] = {{"train_identities", data.splits.train_identities},
                 {"heldout_identities", data.splits.heldout_identities},
                 {"train_anchors", data.splits.train_anchors},
                 {"heldout_anchors", data.splits.heldout_anchors}};
  json anchor_seeds = json::array();
  json identity_seeds = json::array();
  for (const auto& a : data.anchors) anchor_seeds.push_back(a.seed);
  for (const auto& i : data.identities) identity_seeds.push_back(i.seed);
  h["seeds"] = {{"top", cfg.seed}, {"anchors", anchor_seeds}, {"identities", identity_seeds}};
  h["frame_rate"] = data.anchors.empty() ? 30.0 : data.anchors.front().frame_rate;

  const HeadTemplate& t = data.tmpl;
  c.put("template.mean_vertices", t.mean_vertices);
  c.put("template.exp_basis", t.exp_basis);
  c.put("template.jaw_pivot", Matrix(t.jaw_pivot.transpose()));
  c.put("template.jaw_axis_frame", Matrix(t.jaw_axis_frame));
  c.put("template.skin_weights", column(t.skin_weights));
  Matrix labels(t.vertex_count(), 1);
  for (Index i = 0; i < labels.rows(); ++i) labels(i, 0) = static_cast<double>(t.region_labels[static_cast<std::size_t>(i)]);
  c.put("template.region_labels", labels);

  for (Emotion e : kAllEmotions) {
    const EmotionMap& m = data.map(e);
    c.put(emotion_blob(e, "mixing"), m.mixing);
    c.put(emotion_blob(e, "bias"), column(m.bias));
    c.put(emotion_blob(e, "jaw_bias"), column(m.jaw_bias));
    c.put(emotion_blob(e, "appearance_code"), column(m.appearance_code));
  }
  c.put("appearance_prototype", data.appearance_prototype);
  for (const auto& a : data.anchors) {
    c.put(anchor_blob(a.anchor_id, "speech"), a.speech);
    c.put(anchor_blob(a.anchor_id, "jaw"), a.jaw);
  }
  for (const auto& i : data.identities) {
    c.put(identity_blob(i.id, "base_colors"), i.base_colors);
    c.put(identity_blob(i.id, "response"), i.response);
  }
  return c;
}

Dataset from_container(const Container& c) {
  const json& h = c.header();
  Dataset d;
  try {
    const json& cfg = h.at("config");
    d.config.seed = cfg.at("seed").get<std::uint64_t>();
    d.config.vertices = cfg.at("vertices").get<int>();
    d.config.expression_dims = cfg.at("expression_dims").get<int>();
    d.config.anchors = cfg.at("anchors").get<int>();
    d.config.heldout_anchors = cfg.at("heldout_anchors").get<int>();
    d.config.identities = cfg.at("identities").get<int>();
    d.config.heldout_identities = cfg.at("heldout_identities").get<int>();
    d.config.frames = cfg.at("frames").get<int>();
    d.config.appearance_code_dim = cfg.at("appearance_code_dim").get<int>();
    d.config.kappa = cfg.at("kappa").get<double>();
    const json& s = h.at("splits");
    d.splits.train_identities = s.at("train_identities").get<std::vector<int>>();
    d.splits.heldout_identities = s.at("heldout_identities").get<std::vector<int>>();
    d.splits.train_anchors = s.at("train_anchors").get<std::vector<int>>();
    d.splits.heldout_anchors = s.at("heldout_anchors").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::bad_manifest, std::string("dataset manifest: ") + e.what());
  }
  d.splits.validate(d.config.identities, d.config.anchors);

  const auto shaped = [&](const std::string& name, Index rows, Index cols) -> const Matrix& {
    const Matrix& m = c.get(name);
    if (m.rows() != rows || m.cols() != cols) {
      throw LoadError(LoadError::Kind::shape_mismatch, "blob '" + name + "' has shape [" + std::to_string(m.rows()) + "x" +
                                                           std::to_string(m.cols()) + "], expected [" + std::to_string(rows) +
                                                           "x" + std::to_string(cols) + "]");
    }
    return m;
  };
  const Index v = d.config.vertices;
  const Index e = d.config.expression_dims;
  const Index da = d.config.appearance_code_dim;
  const Index f = d.config.frames;

  d.tmpl.mean_vertices = shaped("template.mean_vertices", v, 3);
  d.tmpl.exp_basis = shaped("template.exp_basis", 3 * v, e);
  d.tmpl.jaw_pivot = shaped("template.jaw_pivot", 1, 3).row(0).transpose();
  d.tmpl.jaw_axis_frame = shaped("template.jaw_axis_frame", 3, 3);
  d.tmpl.skin_weights = shaped("template.skin_weights", v, 1).col(0);
  const Matrix& labels = shaped("template.region_labels", v, 1);
  d.tmpl.region_labels.resize(static_cast<std::size_t>(v));
  for (Index i = 0; i < v; ++i) {
    const double l = labels(i, 0);
    if (!(l >= 0.0 && l < kRegionCount) || l != std::floor(l)) {
      throw LoadError(LoadError::Kind::shape_mismatch, "template.region_labels holds an invalid region id");
    }
    d.tmpl.region_labels[static_cast<std::size_t>(i)] = static_cast<Region>(static_cast<int>(l));
  }
  try {
    d.tmpl.validate();
  } catch (const std::exception& ex) {
    throw LoadError(LoadError::Kind::shape_mismatch, std::string("stored template is invalid: ") + ex.what());
  }

  for (Emotion em : kAllEmotions) {
    EmotionMap& m = d.maps[static_cast<std::size_t>(em)];
    m.mixing = shaped(emotion_blob(em, "mixing"), e, e);
    m.bias = shaped(emotion_blob(em, "bias"), e, 1).col(0);
    m.jaw_bias = shaped(emotion_blob(em, "jaw_bias"), 3, 1).col(0);
    m.appearance_code = shaped(emotion_blob(em, "appearance_code"), da, 1).col(0);
  }
  d.appearance_prototype = shaped("appearance_prototype", 3 * kRegionCount, da);

  const std::vector<std::uint64_t> anchor_seeds = h.at("seeds").at("anchors").get<std::vector<std::uint64_t>>();
  const std::vector<std::uint64_t> identity_seeds = h.at("seeds").at("identities").get<std::vector<std::uint64_t>>();
  if (static_cast<int>(anchor_seeds.size()) != d.config.anchors || static_cast<int>(identity_seeds.size()) != d.config.identities) {
    throw LoadError(LoadError::Kind::bad_manifest, "dataset manifest: seed lists do not match the counts");
  }
  const double frame_rate = h.value("frame_rate", 30.0);
  for (int a = 0; a < d.config.anchors; ++a) {
    AnchorRecord rec;
    rec.anchor_id = a;
    rec.seed = anchor_seeds[static_cast<std::size_t>(a)];
    rec.frame_rate = frame_rate;
    rec.speech = shaped(anchor_blob(a, "speech"), f, e);
    rec.jaw = shaped(anchor_blob(a, "jaw"), f, 3);
    d.anchors.push_back(std::move(rec));
  }
  for (int i = 0; i < d.config.identities; ++i) {
    IdentitySpec spec;
    spec.id = i;
    spec.seed = identity_seeds[static_cast<std::size_t>(i)];
    spec.base_colors = shaped(identity_blob(i, "base_colors"), v, 3);
    spec.response = shaped(identity_blob(i, "response"), 3 * kRegionCount, da);
    d.identities.push_back(std::move(spec));
  }
  return d;
}

void write_dataset(const Dataset& data, const fs::path& dir) { to_container(data).write(dir, kDatasetManifest, kDatasetBlob); }

Dataset read_dataset(const fs::path& dir) { return from_container(Container::read(dir, kDatasetManifest, "dataset")); }

std::uint64_t dataset_hash(const Dataset& data) { return to_container(data).content_hash(kDatasetBlob); }

std::uint64_t dataset_dir_hash(const fs::path& dir) {
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw LoadError(LoadError::Kind::missing_file, "cannot open " + p.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const std::vector<char> manifest = slurp(dir / kDatasetManifest);
  const std::vector<char> blob = slurp(dir / kDatasetBlob);
  return fnv1a(blob, fnv1a(manifest));
}

}  // namespace emo
