// Acceptance run: one PASS/FAIL line per criterion A1..A9, plus a few
// supporting checks (prefixed "--") that do not decide the exit code.
// Usage: emoavatar-acceptance [workdir]

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "emo/cli.hpp"
#include "emo/config.hpp"
#include "emo/gradcheck_suite.hpp"
#include "emo/metrics.hpp"
#include "emo/runtime.hpp"
#include "emo/trainer.hpp"
#include "oracles.hpp"

using namespace emo;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(const std::string& id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

void note(const std::string& what, bool pass, const std::string& detail) {
  std::cout << "-- " << what << ' ' << (pass ? "ok" : "NOT MET") << "  " << detail << std::endl;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct CliRun {
  int code;
  std::string out;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "emoavatar");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << "command failed (" << code << "): " << args[1] << "\n" << err.str();
  return {code, out.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> csv_rows(const std::string& csv, const std::string& prefix) {
  std::vector<std::string> rows;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) rows.push_back(line.substr(prefix.size()));
  }
  return rows;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0, saa = 0, sbb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double rms(const Matrix& m) { return std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

// Pipeline forge -> train-geo -> eval through the command-line front end.
struct PipelineRun {
  fs::path data, geo, report;
  std::string forge_out;
  double train_seconds = 0;
  bool ok = false;
};

PipelineRun run_pipeline(const fs::path& dir) {
  PipelineRun r{dir / "data", dir / "geo", dir / "eval.json"};
  fs::remove_all(dir);
  fs::create_directories(dir);
  const CliRun f = cli({"forge", "--seed", "0", "--out", r.data.string()});
  r.forge_out = f.out;
  if (f.code != 0) return r;
  const auto t0 = Clock::now();
  if (cli({"train-geo", "--seed", "0", "--data", r.data.string(), "--out", r.geo.string()}).code != 0) return r;
  r.train_seconds = seconds_since(t0);
  r.ok = cli({"eval", "--seed", "0", "--data", r.data.string(), "--ckpt", r.geo.string(), "--out", r.report.string()}).code == 0;
  return r;
}

// ----------------------------------------------------------------------------

void check_gradients() {
  const auto t0 = Clock::now();
  const std::vector<GradcheckRow> rows = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  bool all = true;
  for (const GradcheckRow& r : rows) {
    all = all && r.passed && r.max_rel_error < 1e-5;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  verdict("A1", all && secs < 60.0,
          std::to_string(rows.size()) + " checks, worst rel err " + num(worst) + " (" + worst_name + "), " + num(secs) + " s");
}

void check_metric_oracles() {
  Rng rng(2024);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const int h = 7 + static_cast<int>(rng.below(18)), w = 7 + static_cast<int>(rng.below(18));
    const Raster x = oracle::random_raster(h, w, rng), y = oracle::random_raster(h, w, rng);
    worst = std::max(worst, std::abs(ssim(x, y) - oracle::ssim(x, y)));
    const Index frames = 1 + static_cast<Index>(rng.below(40)), dims = 1 + static_cast<Index>(rng.below(20));
    Matrix a(frames, dims), b(frames, dims);
    for (Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.normal();
      b.data()[i] = rng.normal();
    }
    worst = std::max(worst, std::abs(aed(a, b) - oracle::aed(a, b)));
    Matrix ja(frames, 3), jb(frames, 3);
    for (Index i = 0; i < ja.size(); ++i) {
      ja.data()[i] = rng.normal();
      jb.data()[i] = rng.normal();
    }
    worst = std::max(worst, std::abs(apd(ja, jb) - oracle::apd(ja, jb)));
    const Index v = 1 + static_cast<Index>(rng.below(300));
    Matrix va(v, 3), vb(v, 3);
    for (Index i = 0; i < va.size(); ++i) {
      va.data()[i] = rng.normal();
      vb.data()[i] = rng.normal();
    }
    worst = std::max(worst, std::abs(vertex_rmse(va, vb) - oracle::vertex_rmse(va, vb)));
  }
  verdict("A8", worst < 1e-12, "100 random inputs per metric, max |lib - oracle| = " + num(worst));
}

void check_sync(const Dataset& d, const std::string& forge_out) {
  const SyncReport s = check_synchronization(d, 1e-10);
  const bool printed = forge_out.find("sync check: PASS") != std::string::npos;
  verdict("A5", s.passed && s.max_error <= 1e-10 && printed,
          std::to_string(d.anchors.size()) + " anchors x 7 variants, max recovery disagreement " + num(s.max_error) +
              (printed ? ", reported at forge time" : ", forge did not report PASS"));
}

void check_normalization(const Dataset& d, const AvatarModel& geo, const RunConfig& rc, const PipelineRun& run) {
  EvalOptions o = rc.eval;
  o.splits = {Split::heldout};
  o.sources = {Emotion::neutral};
  const PairMetrics m = evaluate(geo, d, o).overall.at("heldout");
  const double ratio = m.aed / m.baseline_aed;

  double min_r = 1.0, rmse_pred = 0, rmse_drv = 0;
  for (int a : d.splits.heldout_anchors) {
    const Matrix p_drv = d.emotion_sequence(a, Emotion::neutral);
    const Matrix speech = d.anchors[static_cast<std::size_t>(a)].speech;
    for (Emotion tgt : kAllEmotions) {
      const Matrix p_star = d.emotion_sequence(a, tgt);
      const Matrix p_tilde = geo.modulate(p_drv, geo.token(tgt));
      const Matrix rec = recover_speech(p_tilde, d.map(tgt));
      for (Index k = 0; k < rec.cols(); ++k) min_r = std::min(min_r, pearson(rec.col(k), speech.col(k)));
      rmse_pred += rms(p_tilde - p_star);
      rmse_drv += rms(p_drv - p_star);
    }
  }
  verdict("A2", ratio < 0.1 && min_r > 0.95 && run.train_seconds < 600.0,
          "held-out AED " + num(m.aed) + " vs driving " + num(m.baseline_aed) + " (ratio " + num(ratio) + "), min Pearson r " +
              num(min_r) + ", train-geo " + num(run.train_seconds) + " s");
  note("held-out parameter RMSE below 0.1x driving", rmse_pred < 0.1 * rmse_drv,
       "ratio " + num(rmse_pred / rmse_drv));

  const json report = json::parse(slurp(run.report));
  const json& all = report["metrics"]["heldout"]["overall"];
  note("held-out AED over all seven source emotions (training uses neutral sources only)",
       all["aed"].get<double>() < 0.1 * all["baseline_aed"].get<double>(),
       "ratio " + num(all["aed"].get<double>() / all["baseline_aed"].get<double>()));

  // logged every eval_every steps
  std::istringstream in(slurp(run.geo / "loss_curve.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<double> train;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string step, split, name, value;
    std::getline(f, step, ',');
    std::getline(f, split, ',');
    std::getline(f, name, ',');
    std::getline(f, value, ',');
    if (split == "train" && name == "geo_loss") train.push_back(std::stod(value));
  }
  int rises = 0;
  for (std::size_t k = 1; k < train.size(); ++k) rises += train[k] > 1.05 * train[k - 1];
  note("train geo_loss non-increasing within 5% per logged interval", rises == 0 && train.size() > 1,
       std::to_string(train.size()) + " points, " + std::to_string(rises) + " rises, " + num(train.front()) + " -> " +
           num(train.back()));
}

void check_invariants(const Dataset& d, const AvatarModel& trained, const RunConfig& rc) {
  bool ok = true;
  std::string why;
  const auto fail = [&](const std::string& w) {
    if (ok) why = w;
    ok = false;
  };

  const Matrix t0 = trained.token(Emotion::neutral);
  if (!(t0.array() == 0.0).all()) fail("neutral token not zero");

  double color_gap = 0;
  const int id = d.splits.heldout_identities.front();
  const ReferenceSummary ref = summarize_reference(d.reference(id), d.tmpl);
  const Matrix a = extract_features(trained.params, d.reference(id), d.tmpl);
  const Matrix a_e = emotion_appearance_tokens(trained.params, t0);
  if (!(a_e.array() == 0.0).all()) fail("appearance tokens of the neutral label not zero");
  const Matrix zero_concat = concat_features(a, Matrix::Zero(a_e.rows(), a_e.cols()));
  for (int anchor : d.splits.heldout_anchors) {
    for (Emotion src : kAllEmotions) {
      const Matrix p = d.emotion_sequence(anchor, src);
      if (trained.modulate(p, t0) != p) fail("neutral label changed the parameters");
      for (Index t = 0; t < p.rows(); t += 16) {
        const Eigen::VectorXd pt = p.row(t).transpose();
        const Matrix c = trained.colors(d.tmpl, ref, pt, t0);
        const Matrix z = decode_colors(trained.params, trained.config.app, zero_concat, vertex_query_features(d.tmpl, pt), ref.skip_colors);
        color_gap = std::max(color_gap, (c - z).cwiseAbs().maxCoeff());
      }
    }
  }
  if (color_gap >= 1e-12) fail("neutral colours differ from the zero-token decode");

  const AvatarModel fresh = AvatarModel::initialize(rc.model, rc.seed);
  for (Emotion tgt : kAllEmotions) {
    const Matrix p = d.emotion_sequence(d.splits.heldout_anchors.front(), Emotion::sad);
    if (fresh.modulate(p, fresh.token(tgt)) != p) fail("fresh geometry branch is not the identity");
    const Eigen::VectorXd pt = p.row(5).transpose();
    if (fresh.colors(d.tmpl, ref, pt, fresh.token(tgt)) != ref.skip_colors) fail("fresh appearance branch is not the skip path");
  }

  const Matrix& table = trained.params[kEmotionTableName];
  int commuted = 0;
  for (Emotion e1 : kAllEmotions) {
    for (Emotion e2 : kAllEmotions) {
      const Eigen::VectorXd l1 = encode_label(e1), l2 = encode_label(e2);
      for (int k = 0; k <= 10; ++k) {
        const double alpha = k / 10.0;
        if (masked_token(table, interpolate_emotions(l1, l2, alpha)) != lerp_tokens(masked_token(table, l1), masked_token(table, l2), alpha)) {
          fail("interpolation does not commute with masking");
        }
        ++commuted;
      }
      if (e1 != e2 && masked_token(table, l1 + l2) != masked_token(table, l1) + masked_token(table, l2)) fail("masked token not additive");
    }
    for (double c : {0.25, 0.5, 0.7, 1.3}) {
      const Eigen::VectorXd l = encode_label(e1);
      if (masked_token(table, c * l) != c * masked_token(table, l)) fail("masked token not homogeneous");
    }
  }
  verdict("A4", ok,
          (ok ? std::string("neutral => T = 0 => p~ = p bitwise, colour gap ") + num(color_gap) + ", fresh model is the identity, " +
                    std::to_string(commuted) + " interpolations commute bitwise"
              : why));
}

struct SeedResult {
  AvatarModel geo;
  AblationReport ablation;
};

void check_ablation(const std::vector<SeedResult>& seeds) {
  bool all = true;
  std::string detail;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const AblationReport& r = seeds[s].ablation;
    const AblationVariant &full = r.get("full"), &wg = r.get("wo_geom"), &wa = r.get("wo_app");
    const bool ok = full.aed < wg.aed && full.app_loss < wa.app_loss;
    all = all && ok;
    detail += "seed " + std::to_string(s) + ": AED " + num(full.aed) + " < " + num(wg.aed) + ", L_app " + num(full.app_loss) + " < " +
              num(wa.app_loss) + (ok ? "" : " (violated)") + "; ";
  }
  verdict("A3", all, detail);
}

void check_interpolation(const fs::path& work, const fs::path& data, const fs::path& ckpt, const Dataset& d) {
  const std::string id = std::to_string(d.splits.heldout_identities.front());
  const std::string anchor = std::to_string(d.splits.heldout_anchors.front());
  const auto interp = [&](int steps) {
    const fs::path out = work / ("interp_" + std::to_string(steps));
    const CliRun r = cli({"interpolate", "--seed", "0", "--data", data.string(), "--ckpt", ckpt.string(), "--identity", id, "--anchor", anchor,
                          "--from", "happy", "--via", "neutral", "--to", "sad", "--steps", std::to_string(steps), "--out", out.string()});
    return r.code == 0 ? out : fs::path();
  };
  const fs::path i11 = interp(11), i21 = interp(21);
  if (i11.empty() || i21.empty()) {
    verdict("A6", false, "interpolate failed");
    return;
  }
  const json c11 = json::parse(slurp(i11 / "continuity.json")), c21 = json::parse(slurp(i21 / "continuity.json"));
  const double d11 = c11["max_adjacent_param_delta"].get<double>(), d21 = c21["max_adjacent_param_delta"].get<double>();
  const double ratio = d21 / d11;

  // endpoints against single-emotion transfers of the same identity/anchor
  bool endpoints = true;
  for (const auto& [tgt, step] : std::vector<std::pair<std::string, int>>{{"happy", 0}, {"sad", 10}}) {
    const fs::path out = work / ("transfer_" + tgt);
    if (cli({"transfer", "--seed", "0", "--data", data.string(), "--ckpt", ckpt.string(), "--identity", id, "--anchor", anchor, "--tgt", tgt,
             "--out", out.string()})
            .code != 0) {
      endpoints = false;
      continue;
    }
    const std::vector<std::string> pure = csv_rows(slurp(out / "params.csv"), "modulated,");
    std::string alpha = step == 0 ? "0" : "1";
    const std::vector<std::string> swept = csv_rows(slurp(i11 / "interp_params.csv"), std::to_string(step) + "," + alpha + ",");
    endpoints = endpoints && !pure.empty() && pure == swept;
  }
  verdict("A6", ratio <= 0.6 && endpoints,
          "max adjacent delta " + num(d11) + " (11 steps) -> " + num(d21) + " (21 steps), ratio " + num(ratio) +
              (endpoints ? ", endpoints bit-match pure transfers" : ", endpoints differ from pure transfers"));
}

void check_identity_appearance(const fs::path& work, const fs::path& data_dir, const fs::path& ckpt, const Dataset& d,
                               const AvatarModel& full) {
  const int anchor = d.splits.heldout_anchors.front();
  const Matrix p_drv = d.emotion_sequence(anchor, Emotion::neutral);
  const Matrix t0 = full.token(Emotion::neutral);
  bool all = true;
  double worst = 1e300;
  std::string worst_name;
  for (Emotion tgt : kAllEmotions) {
    if (tgt == Emotion::neutral) continue;
    const Matrix tok = full.token(tgt);
    const Matrix p_tilde = full.modulate(p_drv, tok);
    std::vector<Eigen::Vector3d> deltas;
    for (int id : d.splits.heldout_identities) {
      const ReferenceSummary ref = summarize_reference(d.reference(id), d.tmpl);
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      int n = 0;
      for (Index t = 0; t < p_drv.rows(); t += 8, ++n) {
        const Matrix c_tgt = full.colors(d.tmpl, ref, p_tilde.row(t).transpose(), tok);
        const Matrix c_neu = full.colors(d.tmpl, ref, p_drv.row(t).transpose(), t0);
        acc += (c_tgt - c_neu).colwise().mean().transpose();
      }
      deltas.push_back(acc / n);
    }
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    double mag = 0;
    for (const auto& v : deltas) {
      mean += v;
      mag += v.norm();
    }
    mean /= static_cast<double>(deltas.size());
    mag /= static_cast<double>(deltas.size());
    double var = 0;
    for (const auto& v : deltas) var += (v - mean).squaredNorm();
    const double spread = std::sqrt(var / static_cast<double>(deltas.size()));
    const double rel = spread / mag;
    if (rel < worst) {
      worst = rel;
      worst_name = std::string(emotion_name(tgt));
    }
    all = all && spread >= 0.1 * mag;
  }

  // the geometry output of the command-line transfer does not depend on the identity
  std::vector<std::vector<std::string>> per_id;
  for (int id : {d.splits.heldout_identities.front(), d.splits.heldout_identities.back()}) {
    const fs::path out = work / ("identity_" + std::to_string(id));
    if (cli({"transfer", "--seed", "0", "--data", data_dir.string(), "--ckpt", ckpt.string(), "--identity", std::to_string(id), "--anchor",
             std::to_string(anchor), "--tgt", "angry", "--stride", "64", "--out", out.string()})
            .code == 0) {
      per_id.push_back(csv_rows(slurp(out / "params.csv"), "modulated,"));
    }
  }
  const bool same_geo = per_id.size() == 2 && !per_id[0].empty() && per_id[0] == per_id[1];
  verdict("A7", all && same_geo,
          std::to_string(d.splits.heldout_identities.size()) + " held-out identities, smallest spread/magnitude " + num(worst) + " (" +
              worst_name + "), p~ " + (same_geo ? "identical" : "NOT identical") + " across identities");
}

void check_color_residual(const Dataset& d, const AvatarModel& full) {
  const int id = d.splits.heldout_identities.front();
  const ReferenceSummary ref = summarize_reference(d.reference(id), d.tmpl);
  const Matrix p = d.emotion_sequence(d.splits.heldout_anchors.front(), Emotion::neutral);
  const Eigen::VectorXd pt = p.row(p.rows() / 2).transpose();
  const Matrix base = full.colors(d.tmpl, ref, pt, full.token(Emotion::neutral));
  const Eigen::VectorXd happy = encode_label(Emotion::happy), neutral = encode_label(Emotion::neutral);
  std::vector<double> r;
  for (int k = 0; k <= 10; ++k) r.push_back((full.colors(d.tmpl, ref, pt, full.token(interpolate_emotions(happy, neutral, k / 10.0))) - base).norm());
  bool mono = true;
  for (std::size_t k = 1; k < r.size(); ++k) mono = mono && r[k] <= r[k - 1];
  note("happy->neutral colour residual decreases monotonically", mono && r.back() == 0.0, num(r.front()) + " -> " + num(r[5]) + " -> " + num(r.back()));
}

bool same_files(const fs::path& a, const fs::path& b, std::string& first_diff) {
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = b / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
      first_diff = entry.path().filename().string();
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "emoavatar_acceptance";
  fs::create_directories(work);
  const auto start = Clock::now();
  const RunConfig rc = RunConfig::from_json({{"seed", 0}});

  check_gradients();
  check_metric_oracles();

  const PipelineRun run1 = run_pipeline(work / "run1");
  if (!run1.ok) {
    verdict("A2", false, "forge/train-geo/eval pipeline failed");
    return 1;
  }
  const Dataset data = read_dataset(run1.data);
  check_sync(data, run1.forge_out);
  const AvatarModel geo0 = load_checkpoint(run1.geo);
  check_normalization(data, geo0, rc, run1);

  std::vector<SeedResult> seeds;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto t0 = Clock::now();
    AvatarModel geo = seed == 0 ? geo0 : train_geo(data, rc.model, rc.train, seed).model;
    AblationReport ab = run_ablation(data, rc.model, rc.train, seed, rc.eval, &geo);
    std::cout << "   (seed " << seed << " ablation " << num(seconds_since(t0)) << " s)" << std::endl;
    seeds.push_back({std::move(geo), std::move(ab)});
  }
  check_ablation(seeds);

  const AvatarModel& full = *seeds[0].ablation.full_model;
  check_invariants(data, full, rc);

  const fs::path full_dir = work / "full0";
  fs::remove_all(full_dir);
  CheckpointInfo info;
  info.seed = 0;
  info.step = rc.train.app_steps;
  save_checkpoint(full, info, full_dir);
  check_interpolation(work, run1.data, full_dir, data);
  check_identity_appearance(work, run1.data, full_dir, data, full);
  check_color_residual(data, full);

  {
    // the appearance branch trained on another seed's geometry
    AvatarModel start = AvatarModel::initialize(rc.model, 0);
    adopt_geometry(start, seeds[1].geo);
    const AvatarModel reused = train_app(data, start, rc.train, 0).model;
    EvalOptions o = rc.eval;
    o.splits = {Split::heldout};
    o.sources = rc.train.source_emotions;
    const double l_reuse = evaluate(reused, data, o).overall.at("heldout").app_loss;
    const double l_match = seeds[0].ablation.get("full").app_loss;
    note("reused seed-1 geometry reaches within 10% of matched-seed L_app", std::abs(l_reuse - l_match) <= 0.1 * l_match,
         num(l_reuse) + " vs " + num(l_match));
  }

  const PipelineRun run2 = run_pipeline(work / "run2");
  {
    std::string diff;
    bool same = run2.ok && same_files(run1.data, run2.data, diff) && same_files(run1.geo, run2.geo, diff);
    if (same && slurp(run1.report) != slurp(run2.report)) {
      same = false;
      diff = "eval.json";
    }
    const bool hashes = run2.ok && dataset_dir_hash(run1.data) == dataset_dir_hash(run2.data);
    verdict("A9", same && hashes,
            same && hashes ? "repeated forge/train-geo/eval: dataset, checkpoint and report byte-identical"
                           : "runs differ" + (diff.empty() ? std::string() : " in " + diff));
  }

  std::cout << "total " << num(seconds_since(start)) << " s, " << failures << " criteria failed" << std::endl;
  return failures == 0 ? 0 : 1;
}
