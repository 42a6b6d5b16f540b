#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "emo/cli.hpp"
#include "emo/config.hpp"
#include "emo/errors.hpp"

using namespace emo;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "emoavatar");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// keeps every command under a second or two
const std::vector<std::string> kTiny{"--seed", "0",
                                     "--set", "template.vertices=64",
                                     "--set", "template.expression_dims=4",
                                     "--set", "dataset.anchors=2",
                                     "--set", "dataset.identities=3",
                                     "--set", "dataset.heldout_identities=1",
                                     "--set", "dataset.frames=16",
                                     "--set", "emotion.token_dim=8",
                                     "--set", "geo.d_model=8",
                                     "--set", "geo.ff=8",
                                     "--set", "app.ff=8",
                                     "--set", "app.layers=1",
                                     "--set", "train.geo_steps=4",
                                     "--set", "train.app_steps=2",
                                     "--set", "train.records_per_step=1",
                                     "--set", "eval.max_identities=1"};

// subcommand, the tiny settings, then the caller's flags (later --set wins)
std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.begin() + 1, kTiny.begin(), kTiny.end());
  return args;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emo_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// series -> rows of the params.csv written by transfer
std::vector<std::string> series_rows(const std::string& csv, const std::string& series) {
  std::vector<std::string> rows;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(series + ",", 0) == 0) rows.push_back(line.substr(series.size() + 1));
  }
  return rows;
}

// byte tiles (driving | modulated | target) of a transfer frame
std::vector<std::string> ppm_tiles(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  in.get();
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(magic == "P6");
  REQUIRE(body.size() == static_cast<std::size_t>(w) * h * 3);
  const int tw = w / 3;
  std::vector<std::string> tiles(3);
  for (int y = 0; y < h; ++y) {
    for (int k = 0; k < 3; ++k) tiles[static_cast<std::size_t>(k)] += body.substr((static_cast<std::size_t>(y) * w + k * tw) * 3, tw * 3);
  }
  return tiles;
}

}  // namespace

TEST_CASE("run configuration") {
  const RunConfig d = RunConfig::from_json({{"seed", 3}});
  CHECK(d.seed == 3);
  CHECK(d.forge.vertices == 512);
  CHECK(d.train.geo_steps == 2000);
  CHECK_THROWS_AS(RunConfig::from_json(json::object()), ConfigError);
  CHECK_NOTHROW(RunConfig::from_json(json::object(), false));
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", 0}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", 0}, {"train", {{"geo_step", 5}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", 0}, {"train", {{"geo_steps", "many"}}}}), ConfigError);

  json doc = {{"seed", 1}};
  apply_override(doc, "train.geo_steps=50");
  apply_override(doc, "train.mode=joint");
  apply_override(doc, "train.source_emotions=[\"neutral\",\"sad\"]");
  const RunConfig o = RunConfig::from_json(doc);
  CHECK(o.train.geo_steps == 50);
  CHECK(o.train.mode == "joint");
  CHECK(o.train.source_emotions == std::vector<Emotion>{Emotion::neutral, Emotion::sad});
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);

  // round trip
  const RunConfig back = RunConfig::from_json(o.to_json());
  CHECK(back.to_json() == o.to_json());
}

TEST_CASE("cli forge") {
  const fs::path dir = scratch("forge");
  const Run first = run(with_tiny({"forge", "--out", dir.string()}));
  REQUIRE(first.code == kExitOk);
  CHECK(first.out.find("sync check: PASS") != std::string::npos);
  CHECK(first.out.find("sequence records: 42 (2 x 7 x 3)") != std::string::npos);
  CHECK(first.out.find("wrote") != std::string::npos);
  const std::string manifest = slurp(dir / "manifest.json");

  const Run again = run(with_tiny({"forge", "--out", dir.string()}));
  CHECK(again.code == kExitOk);
  CHECK(again.out.find("identical to existing dataset") != std::string::npos);
  CHECK(slurp(dir / "manifest.json") == manifest);

  // unwritable target: a regular file stands where the directory should be
  const fs::path blocker = scratch("blocker");
  std::ofstream(blocker) << "x";
  CHECK(run(with_tiny({"forge", "--out", (blocker / "sub").string()})).code == kExitIo);
  fs::remove(blocker);

  CHECK(run({"forge", "--out", dir.string()}).code == kExitBadArgument);  // no seed
}

TEST_CASE("cli forge at default size") {
  const fs::path dir = scratch("forge_default");
  const Run r = run({"forge", "--seed", "0", "--out", dir.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("sequence records: 896 (4 x 7 x 32)") != std::string::npos);
  CHECK(r.out.find("sync check: PASS") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli pipeline") {
  const fs::path data = scratch("data");
  const fs::path geo = scratch("geo");
  const fs::path app = scratch("app");
  REQUIRE(run(with_tiny({"forge", "--out", data.string()})).code == kExitOk);

  SUBCASE("untrained checkpoint leaves the driving sequence alone") {
    REQUIRE(run(with_tiny({"train-geo", "--data", data.string(), "--out", geo.string(), "--set", "train.geo_steps=0"})).code ==
            kExitOk);
    const fs::path out = scratch("transfer0");
    const Run t = run(with_tiny({"transfer", "--data", data.string(), "--ckpt", geo.string(), "--identity", "2", "--anchor", "1",
                                 "--tgt", "happy", "--stride", "8", "--out", out.string()}));
    REQUIRE(t.code == kExitOk);
    const std::string csv = slurp(out / "params.csv");
    CHECK(series_rows(csv, "driving") == series_rows(csv, "modulated"));
    CHECK(series_rows(csv, "driving").size() == 16);
    CHECK(fs::exists(out / "frame_000.ppm"));
    CHECK(fs::exists(out / "frame_008.ppm"));
    CHECK_FALSE(fs::exists(out / "frame_001.ppm"));
    const json s = json::parse(slurp(out / "summary.json"));
    CHECK(s["aed_modulated"].get<double>() == s["aed_driving"].get<double>());
  }

  SUBCASE("trained") {
    REQUIRE(run(with_tiny({"train-geo", "--data", data.string(), "--out", geo.string()})).code == kExitOk);
    CHECK(fs::exists(geo / "loss_curve.csv"));
    REQUIRE(run(with_tiny({"train-app", "--data", data.string(), "--geo", geo.string(), "--out", app.string()})).code == kExitOk);

    // neutral target: geometry and colours of the modulated tile match driving
    const fs::path out = scratch("transfer_neutral");
    REQUIRE(run(with_tiny({"transfer", "--data", data.string(), "--ckpt", app.string(), "--identity", "0", "--anchor", "0",
                           "--tgt", "neutral", "--stride", "16", "--out", out.string()}))
                .code == kExitOk);
    const std::string csv = slurp(out / "params.csv");
    CHECK(series_rows(csv, "driving") == series_rows(csv, "modulated"));
    const std::vector<std::string> tiles = ppm_tiles(out / "frame_000.ppm");
    CHECK(tiles[0] == tiles[1]);

    const Run e = run(with_tiny({"eval", "--data", data.string(), "--ckpt", app.string()}));
    REQUIRE(e.code == kExitOk);
    const json report = json::parse(e.out);
    CHECK(report.contains("dataset_hash"));
    CHECK(report["checkpoint"].contains("hash"));
    CHECK(report["checkpoint"]["seed"] == 0);
    for (const char* split : {"train", "heldout"}) {
      const json& s = report["metrics"][split];
      for (const char* k : {"psnr", "ssim", "aed", "apd", "vertex_rmse", "geo_loss", "app_loss", "baseline_aed"}) {
        CHECK(s["overall"].contains(k));
      }
      CHECK(s["pairs"].size() == 49);
      CHECK(s["by_source"].size() == 7);
    }

    const fs::path ip = scratch("interp");
    const Run i = run(with_tiny({"interpolate", "--data", data.string(), "--ckpt", app.string(), "--identity", "0", "--anchor", "0",
                                 "--from", "happy", "--via", "neutral", "--to", "sad", "--steps", "5", "--out", ip.string()}));
    REQUIRE(i.code == kExitOk);
    const json c = json::parse(slurp(ip / "continuity.json"));
    CHECK(c["steps"] == 5);
    CHECK(c["alphas"].size() == 5);
    CHECK(c["frame"] == 8);
    CHECK(fs::exists(ip / "grid.ppm"));
    CHECK(fs::exists(ip / "interp_004.ppm"));
    CHECK(run(with_tiny({"interpolate", "--data", data.string(), "--ckpt", app.string(), "--identity", "0", "--anchor", "0",
                         "--from", "happy", "--to", "sad", "--steps", "1", "--out", ip.string()}))
              .code == kExitBadArgument);

    const fs::path rd = scratch("render");
    CHECK(run(with_tiny({"render", "--data", data.string(), "--ckpt", app.string(), "--identity", "1", "--anchor", "0",
                         "--emotion", "angry", "--frame", "3", "--out", rd.string()}))
              .code == kExitOk);
    CHECK_FALSE(fs::is_empty(rd));

    // checkpoint built for other dimensions
    const fs::path other = scratch("data_other");
    REQUIRE(run(with_tiny({"forge", "--out", other.string(), "--set", "template.expression_dims=5"})).code == kExitOk);
    CHECK(run(with_tiny({"eval", "--data", other.string(), "--ckpt", app.string(), "--set", "template.expression_dims=5"})).code ==
          kExitConfigMismatch);
    CHECK(run(with_tiny({"train-geo", "--data", other.string(), "--out", scratch("mismatch").string()})).code ==
          kExitConfigMismatch);
  }

  SUBCASE("argument errors") {
    const Run bad = run(with_tiny({"transfer", "--data", data.string(), "--ckpt", geo.string(), "--identity", "0", "--anchor", "0",
                                   "--tgt", "furious", "--out", scratch("t").string()}));
    CHECK(bad.code == kExitBadArgument);
    for (const char* name : {"neutral", "happy", "sad", "surprised", "fear", "disgust", "angry"}) {
      CHECK(bad.err.find(name) != std::string::npos);
    }
    CHECK(run(with_tiny({"eval", "--data", data.string(), "--ckpt", scratch("none").string()})).code == kExitMissingArtifact);
    CHECK(run(with_tiny({"eval", "--data", scratch("nodata").string(), "--ckpt", geo.string()})).code == kExitMissingArtifact);
    REQUIRE(run(with_tiny({"train-geo", "--data", data.string(), "--out", geo.string(), "--set", "train.geo_steps=0"})).code ==
            kExitOk);
    CHECK(run(with_tiny({"transfer", "--data", data.string(), "--ckpt", geo.string(), "--identity", "9", "--anchor", "0",
                         "--tgt", "sad", "--out", scratch("t").string()}))
              .code == kExitBadArgument);
    CHECK(run({"train-geo", "--nonsense"}).code == kExitBadArgument);
    CHECK(run(with_tiny({"forge", "--out", scratch("x").string(), "--set", "train.unknown=1"})).code == kExitBadArgument);
    CHECK(run({"--help"}).code == kExitOk);
  }
}

TEST_CASE("cli gradcheck") {
  const Run ok = run({"gradcheck"});
  CHECK(ok.code == kExitOk);
  const Run fault = run({"gradcheck", "--inject-fault", "tanh"});
  CHECK(fault.code == kExitGradcheckFailed);
  CHECK(fault.out.find("tanh") != std::string::npos);
}
