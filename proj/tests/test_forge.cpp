#include <doctest.h>

#include <Eigen/LU>

#include <filesystem>
#include <fstream>

#include "emo/errors.hpp"
#include "emo/forge.hpp"
#include "helpers.hpp"

using namespace emo;
namespace fs = std::filesystem;

namespace {

ForgeConfig small_forge() {
  ForgeConfig c;
  c.vertices = 128;
  c.expression_dims = 8;
  c.anchors = 3;
  c.heldout_anchors = 1;
  c.identities = 6;
  c.heldout_identities = 2;
  c.frames = 32;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emo_forge_test_" + name);
  fs::remove_all(p);
  return p;
}

void truncate_file(const fs::path& p, std::uintmax_t bytes) { fs::resize_file(p, fs::file_size(p) - bytes); }

}  // namespace

TEST_CASE("speech tracks") {
  CHECK(gen_speech_track(5, 64, 16) == gen_speech_track(5, 64, 16));
  CHECK(gen_speech_track(5, 64, 16) != gen_speech_track(6, 64, 16));
  CHECK_THROWS_AS(gen_speech_track(0, 7, 4), DomainError);
  double worst_step = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    for (int f : {32, 64}) {
      const Matrix m = gen_speech_track(s, f, 16);
      CHECK(m.cwiseAbs().maxCoeff() <= 1.5);
      worst_step = std::max(worst_step, (m.bottomRows(f - 1) - m.topRows(f - 1)).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst_step < 0.5);
}

TEST_CASE("emotion maps") {
  for (Emotion e : kAllEmotions) {
    const EmotionMap m = gen_emotion_map(11, e, 16, 4);
    if (e == Emotion::neutral) {
      CHECK(m.mixing == Matrix::Identity(16, 16));
      CHECK(m.bias.isZero(0.0));
      CHECK(m.jaw_bias.isZero(0.0));
      CHECK(m.appearance_code.isZero(0.0));
      continue;
    }
    CHECK((m.mixing - Matrix::Identity(16, 16)).norm() <= 0.3);
    CHECK(std::abs(Eigen::MatrixXd(m.mixing).determinant()) > 0.1);
    CHECK(m.bias.cwiseAbs().maxCoeff() <= 0.4);
    CHECK(m.jaw_bias.cwiseAbs().maxCoeff() <= 0.05);
    CHECK(m.appearance_code.norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("apply and recover") {
  Rng rng(1);
  const Matrix speech = gen_speech_track(2, 32, 8);
  const Matrix jaw = gen_jaw_track(3, 32);
  const Matrix p0 = apply_emotion(speech, jaw, gen_emotion_map(0, Emotion::neutral, 8, 4));
  CHECK(p0.leftCols(8) == speech);
  CHECK(p0.rightCols(3) == jaw);
  const EmotionMap happy = gen_emotion_map(4, Emotion::happy, 8, 4);
  const EmotionMap sad = gen_emotion_map(5, Emotion::sad, 8, 4);
  const Matrix ph = apply_emotion(speech, jaw, happy), ps = apply_emotion(speech, jaw, sad);
  CHECK((recover_speech(ph, happy) - speech).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((recover_speech(ph, happy) - recover_speech(ps, sad)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(apply_emotion(speech, jaw.topRows(5), happy), DimensionError);
}

TEST_CASE("identities") {
  const HeadTemplate t = make_default_template(1, 128, 8);
  const Matrix proto = gen_appearance_prototype(2, 4);
  const IdentitySpec a = gen_identity(10, 0, t, proto), b = gen_identity(10, 0, t, proto), c = gen_identity(11, 1, t, proto);
  CHECK(a.base_colors == b.base_colors);
  CHECK(a.response == b.response);
  CHECK(a.response != c.response);
  for (const IdentitySpec* s : {&a, &c}) {
    CHECK(s->base_colors.minCoeff() >= 0.2);
    CHECK(s->base_colors.maxCoeff() <= 0.9);
  }
  CHECK_THROWS_AS(gen_identity(1, 0, t, Matrix::Zero(5, 4)), DimensionError);
}

TEST_CASE("dataset structure") {
  const Dataset d = forge_dataset(small_forge());
  CHECK(d.sequence_records() == 3u * 7u * 6u);
  CHECK(d.splits.heldout_identities == std::vector<int>{4, 5});
  CHECK(d.splits.heldout_anchors == std::vector<int>{2});
  const SyncReport sync = check_synchronization(d);
  CHECK(sync.passed);
  CHECK(sync.max_error < 1e-10);

  ForgeConfig defaults;
  CHECK(forge_dataset(defaults).sequence_records() == 896u);
}

TEST_CASE("samples and the geometry oracle") {
  const Dataset d = forge_dataset(small_forge());
  const SampleRecord nn = synthesize_sample(d, 0, 1, Emotion::neutral, Emotion::neutral);
  CHECK(nn.p_drv == nn.p_star);
  CHECK(nn.target_colors[3] == d.identities[1].base_colors);
  const SampleRecord ff = synthesize_sample(d, 1, 2, Emotion::fear, Emotion::fear);
  CHECK(ff.p_drv == ff.p_star);

  const SampleRecord hs = synthesize_sample(d, 1, 3, Emotion::happy, Emotion::sad);
  const EmotionMap& src = d.map(Emotion::happy);
  const EmotionMap& tgt = d.map(Emotion::sad);
  const Eigen::MatrixXd a_src = src.mixing, a_tgt = tgt.mixing;
  const Eigen::MatrixXd bridge = a_tgt * a_src.inverse();
  for (Index t = 0; t < hs.p_drv.rows(); ++t) {
    const VectorXd exp_drv = hs.p_drv.row(t).head(8).transpose();
    const VectorXd oracle = bridge * (exp_drv - src.bias) + tgt.bias;
    CHECK((oracle - hs.p_star.row(t).head(8).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(hs.target_vertices.size() == 32u);
  CHECK(hs.target_vertices[0] == synthesize_vertices(d.tmpl, VectorXd(hs.p_star.row(0).transpose())));
  CHECK_THROWS_AS(synthesize_sample(d, 9, 0, Emotion::happy, Emotion::sad), RangeError);
}

TEST_CASE("geometry target does not depend on identity") {
  const Dataset d = forge_dataset(small_forge());
  const SampleRecord a = synthesize_sample(d, 0, 0, Emotion::neutral, Emotion::angry);
  const SampleRecord b = synthesize_sample(d, 0, 5, Emotion::neutral, Emotion::angry);
  CHECK(a.p_star == b.p_star);
  CHECK(a.target_colors[0] != b.target_colors[0]);
}

TEST_CASE("target colours follow the closed form") {
  const Dataset d = forge_dataset(small_forge());
  Rng rng(7);
  const VectorXd exp = test::randn(8, 1, rng);
  const Matrix c = d.target_colors(2, Emotion::surprised, exp);
  const double gain = 1.0 + 0.5 * exp.norm() / std::sqrt(8.0);
  const IdentitySpec& id = d.identities[2];
  for (Index i = 0; i < c.rows(); ++i) {
    const int r = static_cast<int>(d.tmpl.region_labels[static_cast<std::size_t>(i)]);
    const Vector3d expect = (id.base_colors.row(i).transpose() + gain * id.response.middleRows(3 * r, 3) * d.map(Emotion::surprised).appearance_code)
                                .cwiseMax(0.0)
                                .cwiseMin(1.0);
    CHECK((c.row(i).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("dataset round trip and hashing") {
  const Dataset d = forge_dataset(small_forge());
  const fs::path dir = scratch("roundtrip");
  write_dataset(d, dir);
  const Dataset r = read_dataset(dir);
  CHECK(r.tmpl.mean_vertices == d.tmpl.mean_vertices);
  CHECK(r.tmpl.exp_basis == d.tmpl.exp_basis);
  CHECK(r.tmpl.skin_weights == d.tmpl.skin_weights);
  CHECK(r.tmpl.region_labels == d.tmpl.region_labels);
  CHECK(r.tmpl.jaw_pivot == d.tmpl.jaw_pivot);
  for (Emotion e : kAllEmotions) {
    CHECK(r.map(e).mixing == d.map(e).mixing);
    CHECK(r.map(e).bias == d.map(e).bias);
    CHECK(r.map(e).jaw_bias == d.map(e).jaw_bias);
    CHECK(r.map(e).appearance_code == d.map(e).appearance_code);
  }
  for (std::size_t a = 0; a < d.anchors.size(); ++a) {
    CHECK(r.anchors[a].speech == d.anchors[a].speech);
    CHECK(r.anchors[a].jaw == d.anchors[a].jaw);
  }
  for (std::size_t i = 0; i < d.identities.size(); ++i) {
    CHECK(r.identities[i].base_colors == d.identities[i].base_colors);
    CHECK(r.identities[i].response == d.identities[i].response);
  }
  CHECK(dataset_hash(r) == dataset_hash(d));
  CHECK(dataset_dir_hash(dir) == dataset_hash(d));
  CHECK(dataset_hash(forge_dataset(small_forge())) == dataset_hash(d));
  ForgeConfig other = small_forge();
  other.seed = 1;
  CHECK(dataset_hash(forge_dataset(other)) != dataset_hash(d));

  const json manifest = json::parse(std::ifstream(dir / kDatasetManifest));
  CHECK(manifest.at("blob_file") == std::string(kDatasetBlob));
  CHECK(manifest.at("emotions").size() == 7u);
  fs::remove_all(dir);
}

TEST_CASE("load errors are distinct") {
  const Dataset d = forge_dataset(small_forge());
  const auto kind_of = [](const fs::path& dir) {
    try {
      read_dataset(dir);
    } catch (const LoadError& e) {
      return e.kind();
    }
    FAIL("expected LoadError");
    return LoadError::Kind::bad_manifest;
  };

  CHECK(kind_of(scratch("absent")) == LoadError::Kind::missing_file);

  const fs::path trunc = scratch("trunc");
  write_dataset(d, trunc);
  truncate_file(trunc / kDatasetBlob, 8);
  try {
    read_dataset(trunc);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(e.kind() == LoadError::Kind::truncated_blob);
    // blobs are laid out in name order, so the last one is cut
    CHECK(std::string(e.what()).find("template.skin_weights") != std::string::npos);
  }

  const auto edit_manifest = [&](const std::string& name, const std::function<void(json&)>& edit) {
    const fs::path dir = scratch(name);
    write_dataset(d, dir);
    json m = json::parse(std::ifstream(dir / kDatasetManifest));
    edit(m);
    std::ofstream(dir / kDatasetManifest) << m.dump();
    return dir;
  };
  CHECK(kind_of(edit_manifest("version", [](json& m) { m["version"] = 99; })) == LoadError::Kind::version_mismatch);
  CHECK(kind_of(edit_manifest("overlap", [](json& m) { m["blobs"][1]["offset"] = m["blobs"][1]["offset"].get<long>() - 4; })) ==
        LoadError::Kind::corrupt_blob_table);
  CHECK(kind_of(edit_manifest("shape", [](json& m) { m["blobs"][0]["shape"][0] = m["blobs"][0]["shape"][0].get<long>() + 1; })) ==
        LoadError::Kind::shape_mismatch);
  CHECK(kind_of(edit_manifest("splits", [](json& m) { m["splits"]["heldout_identities"].push_back(0); })) ==
        LoadError::Kind::invalid_splits);
  CHECK(kind_of(edit_manifest("kind", [](json& m) { m["kind"] = "checkpoint"; })) == LoadError::Kind::bad_manifest);

  const fs::path junk = scratch("junk");
  write_dataset(d, junk);
  std::ofstream(junk / kDatasetManifest) << "{not json";
  CHECK(kind_of(junk) == LoadError::Kind::bad_manifest);

  const fs::path extra = scratch("extra");
  write_dataset(d, extra);
  std::ofstream(extra / kDatasetBlob, std::ios::app | std::ios::binary) << "abcd";
  CHECK(kind_of(extra) == LoadError::Kind::corrupt_blob_table);

  for (const char* n : {"trunc", "version", "overlap", "shape", "splits", "kind", "junk", "extra"}) fs::remove_all(scratch(n));
}

TEST_CASE("split validation") {
  Splits s;
  s.train_identities = {0, 1};
  s.heldout_identities = {1};
  s.train_anchors = {0};
  s.heldout_anchors = {1};
  CHECK_THROWS_AS(s.validate(3, 2), LoadError);
  s.heldout_identities = {2};
  CHECK_NOTHROW(s.validate(3, 2));
  s.heldout_anchors = {5};
  CHECK_THROWS_AS(s.validate(3, 2), LoadError);
}

TEST_CASE("forge config validation") {
  ForgeConfig c;
  c.heldout_identities = c.identities;
  CHECK_THROWS(c.validate());
  c = ForgeConfig{};
  c.frames = 4;
  CHECK_THROWS(c.validate());
}
