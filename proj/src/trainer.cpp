#include "emo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "emo/errors.hpp"
#include "emo/metrics.hpp"
#include "emo/rng.hpp"

namespace emo {

namespace {

constexpr std::uint64_t kGeoOrder = 21;
constexpr std::uint64_t kAppOrder = 22;
constexpr std::uint64_t kAppFrames = 23;

// Cycles through shuffled permutations of [0, n).
class RecordStream {
 public:
  RecordStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle();
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle();
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

const std::vector<int>& split_anchors(const Dataset& d, Split s) {
  return s == Split::train ? d.splits.train_anchors : d.splits.heldout_anchors;
}
const std::vector<int>& split_identities(const Dataset& d, Split s) {
  return s == Split::train ? d.splits.train_identities : d.splits.heldout_identities;
}

Matrix label_row(Emotion e) { return encode_label(e).transpose(); }

std::vector<Matrix> frame_vertices(const HeadTemplate& tmpl, const Matrix& p_seq) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(p_seq.rows()));
  for (Index t = 0; t < p_seq.rows(); ++t) out.push_back(synthesize_vertices(tmpl, Eigen::VectorXd(p_seq.row(t).transpose())));
  return out;
}

struct GeoSample {
  Matrix p_drv, p_star;
  std::vector<Matrix> target_vertices;
  Matrix label;
};

GeoSample make_geo_sample(const Dataset& d, const GeoRecord& r) {
  GeoSample s;
  s.p_drv = d.emotion_sequence(r.anchor, r.source);
  s.p_star = d.emotion_sequence(r.anchor, r.target);
  s.target_vertices = frame_vertices(d.tmpl, s.p_star);
  s.label = label_row(r.target);
  return s;
}

bool geo_trainable(std::string_view name) {
  const std::string c = component_of(name);
  return c == "geo" || c == "emotion";
}
bool app_trainable(std::string_view name) { return component_of(name) == "app"; }

std::vector<Matrix> empty_grads(const ParameterSet& params, const std::function<bool(std::string_view)>& trainable) {
  std::vector<Matrix> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable(params.name(i))) g[i] = Matrix::Zero(params.value(i).rows(), params.value(i).cols());
  }
  return g;
}

void collect(std::vector<Matrix>& grads, const BoundParameters& w) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() > 0 && w.at(i).requires_grad()) grads[i] += w.at(i).grad();
  }
}

// Geometry loss of one record on a fresh tape; returns the loss tensor.
ad::Tensor geo_record_loss(const BoundParameters& w, const AvatarModel& model, const Dataset& d, const GeoSample& s,
                           const GeoLossWeights& weights) {
  ad::Tape& tape = *w.at(0).tape();
  const ad::Tensor token = masked_token(w[kEmotionTableName], tape.constant(s.label));
  const ad::Tensor p_tilde = modulate_sequence(w, model.config.geo, tape.constant(s.p_drv), token);
  return geo_loss(d.tmpl, p_tilde, s.p_star, s.target_vertices, weights);
}

struct AppFrame {
  Matrix p_tilde_row;  // 1 x (E+3)
  std::vector<int> owner;
  Matrix target_pixels;
};

struct ReferenceCache {
  const Dataset& data;
  std::map<int, ReferenceSummary> refs;
  const ReferenceSummary& get(int id) {
    auto it = refs.find(id);
    if (it == refs.end()) it = refs.emplace(id, summarize_reference(data.reference(id), data.tmpl)).first;
    return it->second;
  }
};

AppFrame make_app_frame(const Dataset& d, const Matrix& p_tilde_row, const Matrix& p_star_row, int identity, Emotion target,
                        const Camera& cam) {
  AppFrame f;
  f.p_tilde_row = p_tilde_row;
  const Eigen::VectorXd pt = p_tilde_row.row(0).transpose();
  f.owner = rasterize(synthesize_vertices(d.tmpl, pt), cam).owner;
  const Eigen::VectorXd ps = p_star_row.row(0).transpose();
  const AvatarState tgt{synthesize_vertices(d.tmpl, ps), d.target_colors(identity, target, ps.head(d.tmpl.expression_dims()))};
  f.target_pixels = render(tgt, cam).pixels;
  return f;
}

// Mean appearance loss over the given frames of one record on the tape that owns w.
ad::Tensor app_record_loss(const BoundParameters& w, const AvatarModel& model, const Dataset& d, const ReferenceSummary& ref,
                           const Matrix& token, const std::vector<AppFrame>& frames, const ad::Tensor* table, Emotion target) {
  ad::Tape& tape = *w.at(0).tape();
  const ad::Tensor a = extract_features(w, tape.constant(ref.region_colors), tape.constant(ref.region_positions));
  const ad::Tensor tok = table ? masked_token(*table, tape.constant(label_row(target))) : tape.constant(token);
  const ad::Tensor features = concat_features(a, emotion_appearance_tokens(w, tok));
  ad::Tensor total;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Matrix query = vertex_query_features(d.tmpl, frames[k].p_tilde_row.row(0).transpose());
    const ad::Tensor colors = decode_colors(w, model.config.app, features, query, ref.skip_colors);
    const ad::Tensor loss = app_loss(shade(colors, frames[k].owner), frames[k].target_pixels);
    total = k == 0 ? loss : ad::add(total, loss);
  }
  return ad::scale(total, 1.0 / static_cast<double>(frames.size()));
}

std::vector<int> pick_frames(int frames, int count, Rng& rng) {
  std::vector<int> out;
  for (int k = 0; k < count; ++k) out.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(frames))));
  return out;
}

// Fixed, evenly spread subset of records used for the appearance loss curve.
double app_curve_loss(const AvatarModel& model, const Dataset& d, Split split, const TrainConfig& tc, const AppOptions& opt) {
  const std::vector<AppRecord> all = app_records(d, split, tc.source_emotions);
  if (all.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(all.size(), 16);
  ReferenceCache refs{d, {}};
  double total = 0.0;
  const int f = d.config.frames;
  for (std::size_t k = 0; k < n; ++k) {
    const AppRecord& r = all[k * all.size() / n];
    const Matrix token = model.token(r.target);
    const Matrix p_drv = d.emotion_sequence(r.anchor, r.source);
    const Matrix p_star = d.emotion_sequence(r.anchor, r.target);
    std::vector<AppFrame> frames;
    for (int t : {0, f / 2}) {
      const Matrix p_tilde = model.modulate(p_drv.row(t), token, opt.identity_geometry);
      frames.push_back(make_app_frame(d, p_tilde, p_star.row(t), r.identity, r.target, tc.camera));
    }
    ad::Tape tape;
    const BoundParameters w(tape, model.params, none_trainable);
    const Matrix app_token = opt.zero_emotion ? Matrix::Zero(token.rows(), token.cols()) : token;
    total += app_record_loss(w, model, d, refs.get(r.identity), app_token, frames, nullptr, r.target).item();
  }
  return total / static_cast<double>(n);
}

}  // namespace

void TrainConfig::validate() const {
  if (geo_steps < 0 || app_steps < 0 || records_per_step < 1 || app_frames_per_record < 1 || eval_every < 1) {
    throw DomainError("train: step counts must be non-negative and batch sizes positive");
  }
  if (!(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw DomainError("train: invalid Adam hyperparameters");
  }
  if (!(weights.lambda_param >= 0.0 && weights.lambda_surf >= 0.0)) throw DomainError("train: loss weights must be non-negative");
  if (mode != "staged" && mode != "joint") throw DomainError("train: mode must be 'staged' or 'joint'");
  if (source_emotions.empty()) throw DomainError("train: need at least one source emotion");
  camera.validate();
}

json TrainConfig::to_json() const {
  json sources = json::array();
  for (Emotion e : source_emotions) sources.push_back(emotion_name(e));
  return {{"geo_steps", geo_steps},
          {"app_steps", app_steps},
          {"records_per_step", records_per_step},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"lambda_param", weights.lambda_param},
          {"lambda_surf", weights.lambda_surf},
          {"app_frames_per_record", app_frames_per_record},
          {"eval_every", eval_every},
          {"mode", mode},
          {"source_emotions", sources}};
}

ad::Tensor geo_loss(const HeadTemplate& tmpl, const ad::Tensor& p_tilde, const Matrix& p_star,
                    const std::vector<Matrix>& target_vertices, const GeoLossWeights& weights) {
  if (p_tilde.rows() != p_star.rows() || p_tilde.cols() != p_star.cols()) {
    throw DimensionError("geo_loss: prediction " + p_tilde.shape_string() + " vs target [" + std::to_string(p_star.rows()) + "x" +
                         std::to_string(p_star.cols()) + "]");
  }
  if (p_tilde.rows() < 1) throw DimensionError("geo_loss: empty sequence");
  ad::Tape& tape = *p_tilde.tape();
  const Index frames = p_tilde.rows();
  ad::Tensor total = ad::scale(ad::sumsq(ad::sub(p_tilde, tape.constant(p_star))), weights.lambda_param);
  if (weights.lambda_surf != 0.0) {
    if (static_cast<Index>(target_vertices.size()) != frames) throw DimensionError("geo_loss: need one target mesh per frame");
    const std::vector<ad::Tensor> verts = synthesize_vertices(tape, tmpl, p_tilde);
    ad::Tensor surf;
    for (Index t = 0; t < frames; ++t) {
      const Matrix& target = target_vertices[static_cast<std::size_t>(t)];
      if (target.rows() != tmpl.vertex_count() || target.cols() != 3) throw DimensionError("geo_loss: target mesh shape");
      const ad::Tensor s = ad::sumsq(ad::sub(verts[static_cast<std::size_t>(t)], tape.constant(target)));
      surf = t == 0 ? s : ad::add(surf, s);
    }
    total = ad::add(total, ad::scale(surf, weights.lambda_surf));
  }
  return ad::scale(total, 1.0 / static_cast<double>(frames));
}

double geo_loss(const HeadTemplate& tmpl, const Matrix& p_tilde, const Matrix& p_star, const GeoLossWeights& weights) {
  ad::Tape tape;
  // targets through the same tape synthesis as the prediction, so p~ = p* gives exactly zero
  std::vector<Matrix> targets;
  if (weights.lambda_surf != 0.0) {
    for (const ad::Tensor& v : synthesize_vertices(tape, tmpl, tape.constant(p_star))) targets.push_back(v.value());
  }
  return geo_loss(tmpl, tape.constant(p_tilde), p_star, targets, weights).item();
}

ad::Tensor app_loss(const ad::Tensor& rendered_pixels, const Matrix& target_pixels) {
  if (rendered_pixels.rows() != target_pixels.rows() || rendered_pixels.cols() != target_pixels.cols()) {
    throw DimensionError("app_loss: rendered " + rendered_pixels.shape_string() + " vs target [" +
                         std::to_string(target_pixels.rows()) + "x" + std::to_string(target_pixels.cols()) + "]");
  }
  ad::Tape& tape = *rendered_pixels.tape();
  return ad::scale(ad::sumsq(ad::sub(rendered_pixels, tape.constant(target_pixels))), 1.0 / static_cast<double>(target_pixels.size()));
}

double app_loss(const Raster& rendered, const Raster& target) {
  if (rendered.height != target.height || rendered.width != target.width) throw DimensionError("app_loss: raster sizes differ");
  return (rendered.pixels - target.pixels).squaredNorm() / static_cast<double>(target.pixels.size());
}

OptimizerState OptimizerState::for_params(const ParameterSet& params, const AdamConfig& hp) {
  OptimizerState s;
  s.hp = hp;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    s.v.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
  return s;
}

void adam_step(OptimizerState& state, ParameterSet& params, const std::vector<Matrix>& grads) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_step: gradient/moment count does not match the parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() == 0) continue;
    if (grads[i].rows() != params.value(i).rows() || grads[i].cols() != params.value(i).cols()) {
      throw DimensionError("adam_step: gradient shape differs for parameter " + params.name(i));
    }
    if (!grads[i].allFinite()) throw DomainError("adam_step: non-finite gradient in parameter " + params.name(i));
  }
  ++state.step;
  const AdamConfig& hp = state.hp;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() == 0) continue;
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    Matrix& p = params.value(i);
    const Matrix& g = grads[i];
    for (Index k = 0; k < p.size(); ++k) {
      const double gk = g.data()[k];
      m.data()[k] = hp.beta1 * m.data()[k] + (1.0 - hp.beta1) * gk;
      v.data()[k] = hp.beta2 * v.data()[k] + (1.0 - hp.beta2) * gk * gk;
      const double mhat = m.data()[k] / c1;
      const double vhat = v.data()[k] / c2;
      p.data()[k] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

std::string LossCurve::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,split,loss_name,value\n";
  for (const LossPoint& p : points) os << p.step << ',' << p.split << ',' << p.loss_name << ',' << p.value << '\n';
  return os.str();
}

void LossCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << csv();
}

std::vector<double> LossCurve::series(std::string_view split, std::string_view loss_name) const {
  std::vector<double> out;
  for (const LossPoint& p : points) {
    if (p.split == split && p.loss_name == loss_name) out.push_back(p.value);
  }
  return out;
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "heldout"; }

std::vector<GeoRecord> geo_records(const Dataset& data, Split split, const std::vector<Emotion>& sources) {
  std::vector<GeoRecord> out;
  for (int a : split_anchors(data, split)) {
    for (Emotion s : sources) {
      for (Emotion t : kAllEmotions) out.push_back({a, s, t});
    }
  }
  return out;
}

std::vector<AppRecord> app_records(const Dataset& data, Split split, const std::vector<Emotion>& sources) {
  std::vector<AppRecord> out;
  for (int a : split_anchors(data, split)) {
    for (int id : split_identities(data, split)) {
      for (Emotion s : sources) {
        for (Emotion t : kAllEmotions) out.push_back({a, id, s, t});
      }
    }
  }
  return out;
}

double mean_geo_loss(const AvatarModel& model, const Dataset& data, Split split, const TrainConfig& tc) {
  const std::vector<GeoRecord> records = geo_records(data, split, tc.source_emotions);
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const GeoRecord& r : records) {
    const GeoSample s = make_geo_sample(data, r);
    ad::Tape tape;
    const BoundParameters w(tape, model.params, none_trainable);
    total += geo_record_loss(w, model, data, s, tc.weights).item();
  }
  return total / static_cast<double>(records.size());
}

TrainResult train_geo(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed) {
  tc.validate();
  TrainResult result{AvatarModel::initialize(cfg, seed), {}, 0};
  AvatarModel& model = result.model;
  require_compatible(model, data.tmpl);
  model.components = {"emotion", "geo"};

  const std::vector<GeoRecord> records = geo_records(data, Split::train, tc.source_emotions);
  if (records.empty()) throw DomainError("train_geo: the dataset has no training records");
  std::vector<GeoSample> samples;
  for (const GeoRecord& r : records) samples.push_back(make_geo_sample(data, r));

  OptimizerState opt = OptimizerState::for_params(model.params, tc.adam);
  RecordStream stream(samples.size(), mix_seed(seed, kGeoOrder));
  const auto log = [&](long step) {
    result.curve.add(step, "train", "geo_loss", mean_geo_loss(model, data, Split::train, tc));
    result.curve.add(step, "heldout", "geo_loss", mean_geo_loss(model, data, Split::heldout, tc));
  };
  log(0);
  for (long step = 1; step <= tc.geo_steps; ++step) {
    std::vector<Matrix> grads = empty_grads(model.params, geo_trainable);
    for (int k = 0; k < tc.records_per_step; ++k) {
      const GeoSample& s = samples[stream.next()];
      ad::Tape tape;
      const BoundParameters w(tape, model.params, geo_trainable);
      tape.backward(ad::scale(geo_record_loss(w, model, data, s, tc.weights), 1.0 / tc.records_per_step));
      collect(grads, w);
    }
    adam_step(opt, model.params, grads);
    if (step % tc.eval_every == 0 && step != tc.geo_steps) log(step);
  }
  model.params.quantize_to_float();
  result.steps = tc.geo_steps;
  log(result.steps);
  return result;
}

TrainResult train_app(const Dataset& data, AvatarModel start, const TrainConfig& tc, std::uint64_t seed, const AppOptions& opt) {
  tc.validate();
  TrainResult result{std::move(start), {}, 0};
  AvatarModel& model = result.model;
  require_compatible(model, data.tmpl);
  if (!opt.identity_geometry && !model.has("geo")) throw ConfigMismatch("config mismatch: appearance training needs a geometry branch");
  model.components.insert("app");

  const std::vector<AppRecord> records = app_records(data, Split::train, tc.source_emotions);
  if (records.empty()) throw DomainError("train_app: the dataset has no training records");
  ReferenceCache refs{data, {}};
  OptimizerState state = OptimizerState::for_params(model.params, tc.adam);
  RecordStream stream(records.size(), mix_seed(seed, kAppOrder));
  Rng frame_rng(mix_seed(seed, kAppFrames));
  const auto log = [&](long step) {
    result.curve.add(step, "train", "app_loss", app_curve_loss(model, data, Split::train, tc, opt));
    result.curve.add(step, "heldout", "app_loss", app_curve_loss(model, data, Split::heldout, tc, opt));
  };
  log(0);
  for (long step = 1; step <= tc.app_steps; ++step) {
    std::vector<Matrix> grads = empty_grads(model.params, app_trainable);
    for (int k = 0; k < tc.records_per_step; ++k) {
      const AppRecord& r = records[stream.next()];
      const Matrix token = model.token(r.target);
      const Matrix p_drv = data.emotion_sequence(r.anchor, r.source);
      const Matrix p_star = data.emotion_sequence(r.anchor, r.target);
      std::vector<AppFrame> frames;
      for (int t : pick_frames(data.config.frames, tc.app_frames_per_record, frame_rng)) {
        const Matrix p_tilde = model.modulate(p_drv.row(t), token, opt.identity_geometry);
        frames.push_back(make_app_frame(data, p_tilde, p_star.row(t), r.identity, r.target, tc.camera));
      }
      const Matrix app_token = opt.zero_emotion ? Matrix::Zero(token.rows(), token.cols()) : token;
      ad::Tape tape;
      const BoundParameters w(tape, model.params, app_trainable);
      const ad::Tensor loss = app_record_loss(w, model, data, refs.get(r.identity), app_token, frames, nullptr, r.target);
      tape.backward(ad::scale(loss, 1.0 / tc.records_per_step));
      collect(grads, w);
    }
    adam_step(state, model.params, grads);
    if (step % tc.eval_every == 0 && step != tc.app_steps) log(step);
  }
  model.params.quantize_to_float();
  result.steps = tc.app_steps;
  log(result.steps);
  return result;
}

TrainResult train_joint(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed) {
  tc.validate();
  TrainResult result{AvatarModel::initialize(cfg, seed), {}, 0};
  AvatarModel& model = result.model;
  require_compatible(model, data.tmpl);

  const std::vector<GeoRecord> geo = geo_records(data, Split::train, tc.source_emotions);
  const std::vector<AppRecord> app = app_records(data, Split::train, tc.source_emotions);
  if (geo.empty() || app.empty()) throw DomainError("train_joint: the dataset has no training records");
  std::vector<GeoSample> samples;
  for (const GeoRecord& r : geo) samples.push_back(make_geo_sample(data, r));
  ReferenceCache refs{data, {}};
  OptimizerState state = OptimizerState::for_params(model.params, tc.adam);
  RecordStream geo_stream(samples.size(), mix_seed(seed, kGeoOrder));
  RecordStream app_stream(app.size(), mix_seed(seed, kAppOrder));
  Rng frame_rng(mix_seed(seed, kAppFrames));
  const long steps = std::max(tc.geo_steps, tc.app_steps);
  const auto log = [&](long step) {
    for (Split s : {Split::train, Split::heldout}) {
      result.curve.add(step, std::string(split_name(s)), "geo_loss", mean_geo_loss(model, data, s, tc));
      result.curve.add(step, std::string(split_name(s)), "app_loss", app_curve_loss(model, data, s, tc, {}));
    }
  };
  log(0);
  for (long step = 1; step <= steps; ++step) {
    std::vector<Matrix> grads = empty_grads(model.params, all_trainable);
    for (int k = 0; k < tc.records_per_step; ++k) {
      if (step <= tc.geo_steps) {
        ad::Tape tape;
        const BoundParameters w(tape, model.params, all_trainable);
        tape.backward(ad::scale(geo_record_loss(w, model, data, samples[geo_stream.next()], tc.weights), 1.0 / tc.records_per_step));
        collect(grads, w);
      }
      if (step <= tc.app_steps) {
        const AppRecord& r = app[app_stream.next()];
        const Matrix token = model.token(r.target);
        const Matrix p_drv = data.emotion_sequence(r.anchor, r.source);
        const Matrix p_star = data.emotion_sequence(r.anchor, r.target);
        std::vector<AppFrame> frames;
        for (int t : pick_frames(data.config.frames, tc.app_frames_per_record, frame_rng)) {
          frames.push_back(make_app_frame(data, model.modulate(p_drv.row(t), token), p_star.row(t), r.identity, r.target, tc.camera));
        }
        ad::Tape tape;
        const BoundParameters w(tape, model.params, all_trainable);
        const ad::Tensor& table = w[kEmotionTableName];
        const ad::Tensor loss = app_record_loss(w, model, data, refs.get(r.identity), token, frames, &table, r.target);
        tape.backward(ad::scale(loss, 1.0 / tc.records_per_step));
        collect(grads, w);
      }
    }
    adam_step(state, model.params, grads);
    if (step % tc.eval_every == 0 && step != steps) log(step);
  }
  model.params.quantize_to_float();
  result.steps = steps;
  log(steps);
  return result;
}

void PairMetrics::accumulate(const PairMetrics& o) {
  psnr += o.psnr;
  ssim += o.ssim;
  aed += o.aed;
  apd += o.apd;
  vertex_rmse += o.vertex_rmse;
  geo_loss += o.geo_loss;
  app_loss += o.app_loss;
  baseline_aed += o.baseline_aed;
  count += 1;
}

PairMetrics PairMetrics::mean() const {
  if (count == 0) return *this;
  const double n = count;
  PairMetrics m;
  m.psnr = psnr / n;
  m.ssim = ssim / n;
  m.aed = aed / n;
  m.apd = apd / n;
  m.vertex_rmse = vertex_rmse / n;
  m.geo_loss = geo_loss / n;
  m.app_loss = app_loss / n;
  m.baseline_aed = baseline_aed / n;
  m.count = count;
  return m;
}

json PairMetrics::to_json() const {
  return {{"psnr", psnr},         {"ssim", ssim},         {"aed", aed},           {"apd", apd},
          {"vertex_rmse", vertex_rmse}, {"geo_loss", geo_loss}, {"app_loss", app_loss}, {"baseline_aed", baseline_aed}};
}

json EvalReport::to_json() const {
  json j = json::object();
  for (const auto& [split, pairs_of_split] : pairs) {
    json p = json::object();
    for (const auto& [key, m] : pairs_of_split) p[key] = m.to_json();
    json src = json::object();
    for (const auto& [key, m] : by_source.at(split)) src[key] = m.to_json();
    j[split] = {{"overall", overall.at(split).to_json()}, {"by_source", src}, {"pairs", p}};
  }
  return j;
}

EvalReport evaluate(const AvatarModel& model, const Dataset& data, const EvalOptions& opt) {
  require_compatible(model, data.tmpl);
  if (opt.frame_stride < 1 || opt.max_identities < 1) throw DomainError("evaluate: frame_stride and max_identities must be positive");
  const std::vector<Emotion> sources = opt.sources.empty() ? std::vector<Emotion>(kAllEmotions.begin(), kAllEmotions.end()) : opt.sources;
  const Index e = data.tmpl.expression_dims();
  EvalReport report;
  for (Split split : opt.splits) {
    const std::string sname(split_name(split));
    const std::vector<int>& anchors = split_anchors(data, split);
    std::vector<int> ids = split_identities(data, split);
    if (static_cast<int>(ids.size()) > opt.max_identities) ids.resize(static_cast<std::size_t>(opt.max_identities));
    std::map<int, ReferenceSummary> refs;
    for (int id : ids) refs.emplace(id, summarize_reference(data.reference(id), data.tmpl));

    PairMetrics overall;
    std::map<std::string, PairMetrics> by_src;
    for (Emotion src : sources) {
      for (Emotion tgt : kAllEmotions) {
        const Matrix token = model.token(tgt);
        const Matrix app_token = opt.zero_emotion ? Matrix::Zero(token.rows(), token.cols()) : token;
        PairMetrics geo_sum, app_sum;
        for (int a : anchors) {
          const Matrix p_drv = data.emotion_sequence(a, src);
          const Matrix p_star = data.emotion_sequence(a, tgt);
          const Matrix p_tilde = model.modulate(p_drv, token, opt.identity_geometry);
          const std::vector<Matrix> v_star = frame_vertices(data.tmpl, p_star);
          const std::vector<Matrix> v_tilde = frame_vertices(data.tmpl, p_tilde);
          PairMetrics g;
          g.aed = aed(p_tilde.leftCols(e), p_star.leftCols(e));
          g.baseline_aed = aed(p_drv.leftCols(e), p_star.leftCols(e));
          g.apd = apd(p_tilde.rightCols(3), p_star.rightCols(3));
          double rmse = 0.0;
          for (std::size_t t = 0; t < v_star.size(); ++t) rmse += vertex_rmse(v_tilde[t], v_star[t]);
          g.vertex_rmse = rmse / static_cast<double>(v_star.size());
          {
            ad::Tape tape;
            g.geo_loss = geo_loss(data.tmpl, tape.constant(p_tilde), p_star, v_star, opt.weights).item();
          }
          geo_sum.accumulate(g);

          for (int id : ids) {
            const ReferenceSummary& ref = refs.at(id);
            for (Index t = 0; t < p_star.rows(); t += opt.frame_stride) {
              const Eigen::VectorXd pt = p_tilde.row(t).transpose();
              const Eigen::VectorXd ps = p_star.row(t).transpose();
              const Raster pred = render({v_tilde[static_cast<std::size_t>(t)], model.colors(data.tmpl, ref, pt, app_token)}, opt.camera);
              const Raster target = render({v_star[static_cast<std::size_t>(t)], data.target_colors(id, tgt, ps.head(e))}, opt.camera);
              PairMetrics m;
              m.psnr = psnr(pred, target);
              m.ssim = ssim(pred, target);
              m.app_loss = app_loss(pred, target);
              app_sum.accumulate(m);
            }
          }
        }
        PairMetrics pm = geo_sum.mean();
        const PairMetrics am = app_sum.mean();
        pm.psnr = am.psnr;
        pm.ssim = am.ssim;
        pm.app_loss = am.app_loss;
        pm.count = 1;
        report.pairs[sname][std::string(emotion_name(src)) + "->" + std::string(emotion_name(tgt))] = pm;
        overall.accumulate(pm);
        by_src[std::string(emotion_name(src))].accumulate(pm);
      }
    }
    report.overall[sname] = overall.mean();
    for (auto& [k, m] : by_src) report.by_source[sname][k] = m.mean();
  }
  return report;
}

const AblationVariant& AblationReport::get(std::string_view name) const {
  for (const AblationVariant& v : variants) {
    if (v.name == name) return v;
  }
  throw ContractError("no ablation variant " + std::string(name));
}

json AblationReport::to_json() const {
  json j = json::object();
  for (const AblationVariant& v : variants) {
    j[v.name] = {{"geo_loss", v.geo_loss}, {"app_loss", v.app_loss}, {"aed", v.aed}, {"baseline_aed", v.baseline_aed}};
  }
  return j;
}

AblationReport run_ablation(const Dataset& data, const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed,
                            const EvalOptions& eval, const AvatarModel* trained_geo) {
  EvalOptions opt = eval;
  opt.splits = {Split::heldout};
  if (opt.sources.empty()) opt.sources = tc.source_emotions;

  const auto summarize = [&](const std::string& name, const AvatarModel& m, const EvalOptions& o) {
    const PairMetrics overall = evaluate(m, data, o).overall.at("heldout");
    return AblationVariant{name, overall.geo_loss, overall.app_loss, overall.aed, overall.baseline_aed};
  };

  AblationReport report;
  AvatarModel geo = trained_geo ? *trained_geo : train_geo(data, cfg, tc, seed).model;

  AvatarModel full = train_app(data, geo, tc, seed).model;
  report.variants.push_back(summarize("full", full, opt));

  AppOptions no_geom;
  no_geom.identity_geometry = true;
  AvatarModel fresh = AvatarModel::initialize(cfg, seed);
  fresh.components = {"emotion"};
  EvalOptions o_geom = opt;
  o_geom.identity_geometry = true;
  report.variants.push_back(summarize("wo_geom", train_app(data, fresh, tc, seed, no_geom).model, o_geom));

  AppOptions no_app;
  no_app.zero_emotion = true;
  EvalOptions o_app = opt;
  o_app.zero_emotion = true;
  report.variants.push_back(summarize("wo_app", train_app(data, geo, tc, seed, no_app).model, o_app));

  report.full_model = std::move(full);
  return report;
}

}  // namespace emo
