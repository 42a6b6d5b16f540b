#include "emo/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "emo/autodiff.hpp"
#include "emo/config.hpp"
#include "emo/errors.hpp"
#include "emo/gradcheck_suite.hpp"
#include "emo/metrics.hpp"
#include "emo/runtime.hpp"

namespace emo {

namespace fs = std::filesystem;

namespace {

// Thrown for bad user input discovered after parsing (ids, emotion names).
struct BadArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--set", overrides, "override a config value, e.g. --set train.geo_steps=500")->allow_extra_args(false);
    cmd->add_option("--seed", seed, "shorthand for --set seed=N");
  }

  RunConfig load() const {
    json doc = config_path.empty() ? json::object() : read_config_file(config_path);
    if (seed) doc["seed"] = *seed;
    for (const std::string& o : overrides) apply_override(doc, o);
    return RunConfig::from_json(doc, true);
  }
};

Emotion emotion_arg(const std::string& name) {
  const auto e = parse_emotion(name);
  if (!e) throw BadArgument("unknown emotion '" + name + "'; valid names: " + emotion_names_list());
  return *e;
}

void check_ids(const Dataset& d, int identity, int anchor) {
  if (identity < 0 || identity >= static_cast<int>(d.identities.size())) {
    throw BadArgument("identity " + std::to_string(identity) + " does not exist (dataset has " + std::to_string(d.identities.size()) + ")");
  }
  if (anchor < 0 || anchor >= static_cast<int>(d.anchors.size())) {
    throw BadArgument("anchor " + std::to_string(anchor) + " does not exist (dataset has " + std::to_string(d.anchors.size()) + ")");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string param_header(Index dims) {
  std::string h;
  for (Index k = 0; k < dims; ++k) h += ",p" + std::to_string(k);
  return h;
}

void append_rows(std::ostringstream& os, const std::string& prefix, const Matrix& p) {
  for (Index t = 0; t < p.rows(); ++t) {
    os << prefix << t;
    for (Index k = 0; k < p.cols(); ++k) os << ',' << fmt(p(t, k));
    os << '\n';
  }
}

Raster render_frame(const Dataset& d, const Matrix& p_seq, Index t, const Matrix& colors, const Camera& cam) {
  return render({synthesize_vertices(d.tmpl, Eigen::VectorXd(p_seq.row(t).transpose())), colors}, cam);
}

std::string frame_name(const std::string& stem, Index t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.ppm", stem.c_str(), static_cast<int>(t));
  return buf;
}

int cmd_forge(const RunConfig& rc, const fs::path& out_dir, std::ostream& out) {
  const Dataset d = forge_dataset(rc.forge);
  const SyncReport sync = check_synchronization(d);
  const std::uint64_t hash = dataset_hash(d);
  out << "anchors: " << d.anchors.size() << " (" << d.splits.train_anchors.size() << " train / " << d.splits.heldout_anchors.size()
      << " held-out)\n";
  out << "identities: " << d.identities.size() << " (" << d.splits.train_identities.size() << " train / "
      << d.splits.heldout_identities.size() << " held-out)\n";
  out << "emotions: " << kAllEmotions.size() << "\n";
  out << "frames: " << d.config.frames << "\n";
  out << "sequence records: " << d.sequence_records() << " (" << d.anchors.size() << " x " << kAllEmotions.size() << " x "
      << d.identities.size() << ")\n";
  out << "sync check: " << (sync.passed ? "PASS" : "FAIL") << " (max error " << sync.max_error << ")\n";
  bool identical = false;
  if (fs::exists(out_dir / kDatasetManifest)) {
    try {
      identical = dataset_dir_hash(out_dir) == hash;
    } catch (const LoadError&) {
      identical = false;
    }
  }
  if (identical) {
    out << "identical to existing dataset (hash " << hex64(hash) << ")\n";
  } else {
    write_dataset(d, out_dir);
    out << "wrote " << (out_dir / kDatasetManifest).string() << " (hash " << hex64(hash) << ")\n";
  }
  return sync.passed ? kExitOk : kExitFailure;
}

int cmd_train_geo(const RunConfig& rc, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out) {
  const Dataset d = read_dataset(data_dir);
  if (d.tmpl.expression_dims() != rc.model.expression_dims) {
    throw ConfigMismatch("config mismatch on expression_dims: dataset has " + std::to_string(d.tmpl.expression_dims()) +
                         ", config has " + std::to_string(rc.model.expression_dims));
  }
  const TrainResult res = rc.train.mode == "joint" ? train_joint(d, rc.model, rc.train, rc.seed) : train_geo(d, rc.model, rc.train, rc.seed);
  CheckpointInfo info{rc.seed, res.steps, hex64(dataset_hash(d)), rc.train.to_json()};
  fs::create_directories(out_dir);
  save_checkpoint(res.model, info, out_dir);
  res.curve.write_csv(out_dir / "loss_curve.csv");
  for (const char* split : {"train", "heldout"}) {
    const std::vector<double> s = res.curve.series(split, "geo_loss");
    if (!s.empty()) out << split << " geo_loss: " << s.front() << " -> " << s.back() << "\n";
  }
  out << "checkpoint: " << (out_dir / kCheckpointManifest).string() << " (hash " << hex64(checkpoint_hash(res.model, info)) << ")\n";
  return kExitOk;
}

int cmd_train_app(const RunConfig& rc, const fs::path& data_dir, const fs::path& geo_dir, const fs::path& out_dir, std::ostream& out) {
  const Dataset d = read_dataset(data_dir);
  const AvatarModel geo = load_checkpoint(geo_dir);
  AvatarModel start = AvatarModel::initialize(rc.model, rc.seed);
  start.components = {};
  adopt_geometry(start, geo);
  const TrainResult res = train_app(d, std::move(start), rc.train, rc.seed);
  CheckpointInfo info{rc.seed, res.steps, hex64(dataset_hash(d)), rc.train.to_json()};
  fs::create_directories(out_dir);
  save_checkpoint(res.model, info, out_dir);
  res.curve.write_csv(out_dir / "loss_curve.csv");
  for (const char* split : {"train", "heldout"}) {
    const std::vector<double> s = res.curve.series(split, "app_loss");
    if (!s.empty()) out << split << " app_loss: " << s.front() << " -> " << s.back() << "\n";
  }
  out << "checkpoint: " << (out_dir / kCheckpointManifest).string() << " (hash " << hex64(checkpoint_hash(res.model, info)) << ")\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, const fs::path& data_dir, const fs::path& ckpt_dir, const std::string& out_path, std::ostream& out) {
  CheckpointInfo info;
  const AvatarModel model = load_checkpoint(ckpt_dir, &info);
  const Dataset d = read_dataset(data_dir);
  const EvalReport report = evaluate(model, d, rc.eval);
  const json doc = {{"dataset_hash", hex64(dataset_hash(d))},
                    {"checkpoint", {{"hash", hex64(checkpoint_hash(model, info))}, {"step", info.step}, {"seed", info.seed}}},
                    {"metrics", report.to_json()}};
  const std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
    const PairMetrics& h = report.overall.at("heldout");
    out << "heldout aed " << h.aed << " (driving " << h.baseline_aed << "), app_loss " << h.app_loss << ", psnr " << h.psnr
        << ", ssim " << h.ssim << "\nreport: " << out_path << "\n";
  }
  return kExitOk;
}

struct TransferArgs {
  std::string data, ckpt, out;
  int identity = 0, anchor = 0;
  std::string src = "neutral", tgt = "neutral";
  int stride = 1;
};

int cmd_transfer(const RunConfig& rc, const TransferArgs& a, std::ostream& out) {
  const Emotion src = emotion_arg(a.src);
  const Emotion tgt = emotion_arg(a.tgt);
  if (a.stride < 1) throw BadArgument("--stride must be positive");
  const AvatarModel model = load_checkpoint(a.ckpt);
  const Dataset d = read_dataset(a.data);
  require_compatible(model, d.tmpl);
  check_ids(d, a.identity, a.anchor);

  const Matrix p_drv = d.emotion_sequence(a.anchor, src);
  const Matrix p_star = d.emotion_sequence(a.anchor, tgt);
  const Matrix token = model.token(tgt);
  const Matrix p_tilde = model.modulate(p_drv, token);
  const ReferenceSummary ref = summarize_reference(d.reference(a.identity), d.tmpl);
  const Camera& cam = rc.train.camera;
  const Index e = d.tmpl.expression_dims();

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "series,frame" << param_header(p_drv.cols()) << '\n';
  append_rows(csv, "driving,", p_drv);
  append_rows(csv, "modulated,", p_tilde);
  append_rows(csv, "target,", p_star);
  write_text(dir / "params.csv", csv.str());

  const Matrix src_token = model.token(src);
  for (Index t = 0; t < p_drv.rows(); t += a.stride) {
    const Eigen::VectorXd pd = p_drv.row(t).transpose();
    const Eigen::VectorXd pm = p_tilde.row(t).transpose();
    const Eigen::VectorXd ps = p_star.row(t).transpose();
    const Raster driving = render_frame(d, p_drv, t, model.colors(d.tmpl, ref, pd, src_token), cam);
    const Raster modulated = render_frame(d, p_tilde, t, model.colors(d.tmpl, ref, pm, token), cam);
    const Raster target = render_frame(d, p_star, t, d.target_colors(a.identity, tgt, ps.head(e)), cam);
    write_ppm(hstack({driving, modulated, target}), dir / frame_name("frame", t));
  }
  const double aed_mod = aed(p_tilde.leftCols(e), p_star.leftCols(e));
  const double aed_drv = aed(p_drv.leftCols(e), p_star.leftCols(e));
  write_text(dir / "summary.json", json({{"source", a.src},
                                         {"target", a.tgt},
                                         {"identity", a.identity},
                                         {"anchor", a.anchor},
                                         {"aed_modulated", aed_mod},
                                         {"aed_driving", aed_drv},
                                         {"apd_modulated", apd(p_tilde.rightCols(3), p_star.rightCols(3))},
                                         {"apd_driving", apd(p_drv.rightCols(3), p_star.rightCols(3))}})
                                           .dump(2) +
                                       "\n");
  out << a.src << " -> " << a.tgt << ": AED modulated " << aed_mod << ", driving " << aed_drv << "\n";
  return kExitOk;
}

struct InterpolateArgs {
  std::string data, ckpt, out;
  int identity = 0, anchor = 0;
  std::string src = "neutral", from, via, to;
  int steps = 11;
  int frame = -1;
};

int cmd_interpolate(const RunConfig& rc, const InterpolateArgs& a, std::ostream& out) {
  const Emotion src = emotion_arg(a.src);
  std::vector<VectorXd> waypoints{encode_label(emotion_arg(a.from))};
  if (!a.via.empty()) waypoints.push_back(encode_label(emotion_arg(a.via)));
  waypoints.push_back(encode_label(emotion_arg(a.to)));
  if (a.steps < 2) throw BadArgument("--steps must be at least 2");
  const AvatarModel model = load_checkpoint(a.ckpt);
  const Dataset d = read_dataset(a.data);
  require_compatible(model, d.tmpl);
  check_ids(d, a.identity, a.anchor);
  const Index frame = a.frame < 0 ? d.config.frames / 2 : a.frame;
  if (frame >= d.config.frames) throw BadArgument("--frame out of range");

  const Matrix p_drv = d.emotion_sequence(a.anchor, src);
  const ReferenceSummary ref = summarize_reference(d.reference(a.identity), d.tmpl);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  std::ostringstream csv;
  csv << "step,alpha,frame" << param_header(p_drv.cols()) << '\n';
  std::vector<Raster> tiles;
  Matrix prev_params, prev_colors;
  double max_param_delta = 0.0, max_color_delta = 0.0;
  json alphas = json::array();
  for (int k = 0; k < a.steps; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(a.steps - 1);
    const Matrix token = model.token(emotion_path(waypoints, s));
    const Matrix p_tilde = model.modulate(p_drv, token);
    const Matrix colors = model.colors(d.tmpl, ref, p_tilde.row(frame).transpose(), token);
    append_rows(csv, std::to_string(k) + "," + fmt(s) + ",", p_tilde);
    tiles.push_back(render_frame(d, p_tilde, frame, colors, rc.train.camera));
    write_ppm(tiles.back(), dir / frame_name("interp", k));
    if (k > 0) {
      max_param_delta = std::max(max_param_delta, (p_tilde - prev_params).rowwise().norm().maxCoeff());
      max_color_delta = std::max(max_color_delta, (colors - prev_colors).rowwise().norm().maxCoeff());
    }
    prev_params = p_tilde;
    prev_colors = colors;
    alphas.push_back(s);
  }
  write_text(dir / "interp_params.csv", csv.str());
  write_ppm(hstack(tiles), dir / "grid.ppm");
  write_text(dir / "continuity.json", json({{"steps", a.steps},
                                            {"alphas", alphas},
                                            {"frame", frame},
                                            {"max_adjacent_param_delta", max_param_delta},
                                            {"max_adjacent_color_delta", max_color_delta}})
                                              .dump(2) +
                                          "\n");
  out << "steps " << a.steps << ": max adjacent parameter delta " << max_param_delta << ", colour delta " << max_color_delta << "\n";
  return kExitOk;
}

int cmd_render(const RunConfig& rc, const std::string& data_dir, const std::string& ckpt_dir, int identity, int anchor,
               const std::string& emotion, int frame, const std::string& out_dir, std::ostream& out) {
  const Emotion e = emotion_arg(emotion);
  const Dataset d = read_dataset(data_dir);
  check_ids(d, identity, anchor);
  if (frame >= d.config.frames) throw BadArgument("--frame out of range");
  std::optional<AvatarModel> model;
  if (!ckpt_dir.empty()) {
    model = load_checkpoint(ckpt_dir);
    require_compatible(*model, d.tmpl);
  }
  const Matrix p_star = d.emotion_sequence(anchor, e);
  const Matrix p_drv = d.emotion_sequence(anchor, Emotion::neutral);
  const ReferenceSummary ref = summarize_reference(d.reference(identity), d.tmpl);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const Index first = frame < 0 ? 0 : frame;
  const Index last = frame < 0 ? d.config.frames - 1 : frame;
  const Index ex = d.tmpl.expression_dims();
  for (Index t = first; t <= last; ++t) {
    const Eigen::VectorXd ps = p_star.row(t).transpose();
    std::vector<Raster> tiles{render_frame(d, p_star, t, d.target_colors(identity, e, ps.head(ex)), rc.train.camera)};
    if (model) {
      const Matrix token = model->token(e);
      const Matrix p_tilde = model->modulate(p_drv.row(t), token);
      tiles.push_back(render_frame(d, p_tilde, 0, model->colors(d.tmpl, ref, p_tilde.row(0).transpose(), token), rc.train.camera));
    }
    write_ppm(hstack(tiles), dir / frame_name("render", t));
  }
  out << "rendered " << (last - first + 1) << " frame(s) to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& rc, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out) {
  const Dataset d = read_dataset(data_dir);
  const AblationReport report = run_ablation(d, rc.model, rc.train, rc.seed, rc.eval);
  fs::create_directories(out_dir);
  write_text(out_dir / "ablation.json", report.to_json().dump(2) + "\n");
  out << std::left << std::setw(10) << "variant" << std::setw(14) << "aed" << std::setw(14) << "app_loss" << "geo_loss\n";
  for (const AblationVariant& v : report.variants) {
    out << std::setw(10) << v.name << std::setw(14) << v.aed << std::setw(14) << v.app_loss << v.geo_loss << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& fault, std::ostream& out) {
  if (!fault.empty() && fault != "tanh") throw BadArgument("--inject-fault supports only 'tanh'");
  ad::testing::set_tanh_adjoint_fault(fault == "tanh");
  std::vector<GradcheckRow> rows;
  try {
    rows = run_gradcheck_suite();
  } catch (...) {
    ad::testing::set_tanh_adjoint_fault(false);
    throw;
  }
  ad::testing::set_tanh_adjoint_fault(false);
  bool all = true;
  for (const GradcheckRow& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%-28s %10.3e  %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "PASS" : "FAIL");
    out << line;
    all = all && r.passed;
  }
  out << (all ? "all PASS" : "FAILURES present") << " (tolerance " << kGradcheckTolerance << ")\n";
  return all ? kExitOk : kExitGradcheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_allocator();
  CLI::App app{"Emotion-conditioned avatar toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out_dir, data_dir, ckpt_dir, geo_dir, out_path, fault;
  TransferArgs ta;
  InterpolateArgs ia;
  int identity = 0, anchor = 0, frame = -1;
  std::string emotion = "neutral";

  CLI::App* forge = app.add_subcommand("forge", "generate the synthetic corpus");
  common.attach(forge);
  forge->add_option("--out", out_dir, "dataset directory")->required();

  CLI::App* train_geo_cmd = app.add_subcommand("train-geo", "train the geometry branch");
  common.attach(train_geo_cmd);
  train_geo_cmd->add_option("--data", data_dir)->required();
  train_geo_cmd->add_option("--out", out_dir)->required();

  CLI::App* train_app_cmd = app.add_subcommand("train-app", "train the appearance branch on a frozen geometry checkpoint");
  common.attach(train_app_cmd);
  train_app_cmd->add_option("--data", data_dir)->required();
  train_app_cmd->add_option("--geo", geo_dir, "geometry checkpoint directory")->required();
  train_app_cmd->add_option("--out", out_dir)->required();

  CLI::App* eval = app.add_subcommand("eval", "metric report for a checkpoint");
  common.attach(eval);
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--ckpt", ckpt_dir)->required();
  eval->add_option("--out", out_path, "write the JSON report here instead of stdout");

  CLI::App* transfer = app.add_subcommand("transfer", "emotion transfer for one identity/anchor");
  common.attach(transfer);
  transfer->add_option("--data", ta.data)->required();
  transfer->add_option("--ckpt", ta.ckpt)->required();
  transfer->add_option("--identity", ta.identity)->required();
  transfer->add_option("--anchor", ta.anchor)->required();
  transfer->add_option("--src", ta.src);
  transfer->add_option("--tgt", ta.tgt)->required();
  transfer->add_option("--stride", ta.stride, "render every n-th frame");
  transfer->add_option("--out", ta.out)->required();

  CLI::App* interp = app.add_subcommand("interpolate", "sweep the emotion label between two or three emotions");
  common.attach(interp);
  interp->add_option("--data", ia.data)->required();
  interp->add_option("--ckpt", ia.ckpt)->required();
  interp->add_option("--identity", ia.identity)->required();
  interp->add_option("--anchor", ia.anchor)->required();
  interp->add_option("--src", ia.src);
  interp->add_option("--from", ia.from)->required();
  interp->add_option("--via", ia.via);
  interp->add_option("--to", ia.to)->required();
  interp->add_option("--steps", ia.steps);
  interp->add_option("--frame", ia.frame);
  interp->add_option("--out", ia.out)->required();

  CLI::App* render_cmd = app.add_subcommand("render", "render ground-truth (and optionally model) frames");
  common.attach(render_cmd);
  render_cmd->add_option("--data", data_dir)->required();
  render_cmd->add_option("--ckpt", ckpt_dir);
  render_cmd->add_option("--identity", identity)->required();
  render_cmd->add_option("--anchor", anchor)->required();
  render_cmd->add_option("--emotion", emotion);
  render_cmd->add_option("--frame", frame, "single frame; default all");
  render_cmd->add_option("--out", out_dir)->required();

  CLI::App* ablate = app.add_subcommand("ablate", "full / wo_geom / wo_app comparison");
  common.attach(ablate);
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--out", out_dir)->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--inject-fault", fault, "corrupt an adjoint on purpose (tanh)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadArgument;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(fault, out);
    const RunConfig rc = common.load();
    if (forge->parsed()) return cmd_forge(rc, out_dir, out);
    if (train_geo_cmd->parsed()) return cmd_train_geo(rc, data_dir, out_dir, out);
    if (train_app_cmd->parsed()) return cmd_train_app(rc, data_dir, geo_dir, out_dir, out);
    if (eval->parsed()) return cmd_eval(rc, data_dir, ckpt_dir, out_path, out);
    if (transfer->parsed()) return cmd_transfer(rc, ta, out);
    if (interp->parsed()) return cmd_interpolate(rc, ia, out);
    if (render_cmd->parsed()) return cmd_render(rc, data_dir, ckpt_dir, identity, anchor, emotion, frame, out_dir, out);
    if (ablate->parsed()) return cmd_ablate(rc, data_dir, out_dir, out);
  } catch (const BadArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadArgument;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadArgument;
  } catch (const ConfigMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigMismatch;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == LoadError::Kind::missing_file ? kExitMissingArtifact : kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadArgument;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitFailure;
}

}  // namespace emo
