#include "aumn/data.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "aumn/checkpoint.hpp"
#include "test_util.hpp"

using namespace aumn;
using aumn::testing::random_matrix;

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("aumn_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.U = 4;
  spec.C = 3;
  spec.D = 16;
  spec.videos = 6;
  spec.segments_per_video = 40;
  spec.instances_per_video = 2;
  spec.action_fraction = 0.25;
  spec.noise_std = 0.2;
  spec.seed = 77;
  spec.units_per_class = default_units_per_class(spec.C, spec.U);
  return spec;
}

}  // namespace

TEST_CASE("feature files round-trip bit-exactly") {
  const fs::path dir = scratch_dir("features");
  Rng rng(101);
  const Matrix m = random_matrix(7, 5, rng);
  write_features(dir / "m.auf", m);
  const Matrix back = read_features(dir / "m.auf");
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 5);
  for (Index i = 0; i < m.size(); ++i) {
    CHECK(back.data()[i] == m.data()[i]);
  }
}

TEST_CASE("feature reader distinguishes its failure modes") {
  const fs::path dir = scratch_dir("feature_errors");

  {
    std::ofstream bad(dir / "bad.auf", std::ios::binary);
    bad << "XXXX" << std::string(16, '\0');
  }
  CHECK_THROWS_AS(read_features(dir / "bad.auf"), BadMagicError);

  {
    // Header promises 4x4 doubles but the payload holds only one.
    std::ofstream trunc(dir / "trunc.auf", std::ios::binary);
    trunc << "AUF1";
    const unsigned char four[4] = {4, 0, 0, 0};
    trunc.write(reinterpret_cast<const char*>(four), 4);
    trunc.write(reinterpret_cast<const char*>(four), 4);
    const double payload = 1.0;
    trunc.write(reinterpret_cast<const char*>(&payload), 8);
  }
  CHECK_THROWS_AS(read_features(dir / "trunc.auf"), TruncatedFileError);

  {
    // Dimensions whose product exceeds the supported range.
    std::ofstream huge(dir / "huge.auf", std::ios::binary);
    huge << "AUF1";
    const unsigned char big[4] = {0xff, 0xff, 0xff, 0x7f};
    huge.write(reinterpret_cast<const char*>(big), 4);
    huge.write(reinterpret_cast<const char*>(big), 4);
  }
  CHECK_THROWS_AS(read_features(dir / "huge.auf"), DimensionOverflowError);

  Matrix nan_matrix = Matrix::Zero(2, 2);
  nan_matrix(0, 0) = std::numeric_limits<Real>::quiet_NaN();
  CHECK_THROWS_AS(write_features(dir / "nan.auf", nan_matrix), ValidationError);
}

TEST_CASE("synthetic generation is deterministic and internally consistent") {
  const SyntheticSpec spec = tiny_spec();
  const fs::path dir_a = scratch_dir("synth_a");
  const fs::path dir_b = scratch_dir("synth_b");
  const DatasetManifest a = generate_synthetic(spec, dir_a);
  const DatasetManifest b = generate_synthetic(spec, dir_b);

  REQUIRE(a.records.size() == static_cast<std::size_t>(spec.videos));
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const VideoRecord& rec = a.records[i];
    // Same seed, same bytes.
    for (const auto& [stream, rel] : rec.feature_paths) {
      CHECK(slurp(dir_a / rel) == slurp(dir_b / b.records[i].feature_paths.at(stream)));
    }
    // Ground truth and the segment mask agree exactly.
    std::vector<int> mask(static_cast<std::size_t>(spec.segments_per_video), 0);
    for (const GtSpan& g : rec.ground_truth) {
      for (Index t = g.start; t <= g.end; ++t) mask[static_cast<std::size_t>(t)] = 1;
    }
    CHECK(mask == rec.segment_labels);
    // Label support equals the ground-truth class set and sums to one.
    std::set<int> gt_classes;
    for (const GtSpan& g : rec.ground_truth) gt_classes.insert(g.class_id);
    std::set<int> support;
    for (Index c = 0; c < rec.label.size(); ++c) {
      if (rec.label(c) > 0) support.insert(static_cast<int>(c));
    }
    CHECK(support == gt_classes);
    CHECK(std::abs(rec.label.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("zero-noise renders identical vectors for one unit") {
  SyntheticSpec spec = tiny_spec();
  spec.noise_std = 0.0;
  spec.videos = 2;
  const fs::path dir = scratch_dir("synth_zero_noise");
  const DatasetManifest manifest = generate_synthetic(spec, dir);
  // Two classes sharing a unit emit exactly the same prototype vector where
  // their shared unit plays; with zero noise, any repeated segment of one
  // instance's unit is bitwise identical.
  const VideoRecord& rec = manifest.records.front();
  const Matrix x = read_stream_features(manifest, rec, "rgb");
  const GtSpan& g = rec.ground_truth.front();
  CHECK((x.row(g.start) - x.row(g.start + 1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("default spec hits the target action fraction") {
  SyntheticSpec spec;  // the full default benchmark shape
  spec.videos = 200;
  spec.units_per_class = default_units_per_class(spec.C, spec.U);
  const fs::path dir = scratch_dir("synth_default");
  const DatasetManifest manifest = generate_synthetic(spec, dir);
  Index action = 0, total = 0;
  for (const VideoRecord& rec : manifest.records) {
    for (int v : rec.segment_labels) action += v;
    total += static_cast<Index>(rec.segment_labels.size());
  }
  const Real fraction = static_cast<Real>(action) / static_cast<Real>(total);
  CHECK(fraction > 0.15);
  CHECK(fraction < 0.25);
}

TEST_CASE("infeasible specs are rejected with an explanation") {
  SyntheticSpec spec = tiny_spec();
  spec.segments_per_video = 10;  // budget 2-3 segments cannot host 2 instances
  CHECK_THROWS_AS(validate(spec), ValidationError);

  spec = tiny_spec();
  spec.units_per_class[0] = {0, 0};  // repeated unit id
  CHECK_THROWS_AS(validate(spec), ValidationError);

  spec = tiny_spec();
  spec.units_per_class = {{0, 3}, {1, 3}, {2, 3}};  // unit 3 shared by all
  CHECK_NOTHROW(validate(spec));

  spec.units_per_class = {{0, 1}, {2, 3}, {1, 2}};
  CHECK_NOTHROW(validate(spec));
}

TEST_CASE("manifests round-trip and validate their records") {
  const SyntheticSpec spec = tiny_spec();
  const fs::path dir = scratch_dir("manifest");
  DatasetManifest manifest = generate_synthetic(spec, dir);
  save_manifest(manifest, dir / "manifest.json");
  const DatasetManifest back = load_manifest(dir / "manifest.json");

  REQUIRE(back.records.size() == manifest.records.size());
  CHECK(back.num_classes == manifest.num_classes);
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    CHECK(back.records[i].video_id == manifest.records[i].video_id);
    CHECK((back.records[i].label - manifest.records[i].label).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.records[i].segment_labels == manifest.records[i].segment_labels);
    REQUIRE(back.records[i].ground_truth.size() == manifest.records[i].ground_truth.size());
    for (std::size_t g = 0; g < back.records[i].ground_truth.size(); ++g) {
      CHECK(back.records[i].ground_truth[g].class_id ==
            manifest.records[i].ground_truth[g].class_id);
      CHECK(back.records[i].ground_truth[g].start == manifest.records[i].ground_truth[g].start);
      CHECK(back.records[i].ground_truth[g].end == manifest.records[i].ground_truth[g].end);
    }
  }

  DatasetManifest dup = manifest;
  dup.records.push_back(dup.records.front());
  CHECK_THROWS_AS(validate_manifest(dup), ValidationError);

  DatasetManifest mismatch = manifest;
  mismatch.records[0].label.setZero();
  mismatch.records[0].label(0) = 1;
  mismatch.records[0].ground_truth = {{1, 0, 3}};  // label says class 0, GT says 1
  CHECK_THROWS_AS(validate_manifest(mismatch), ValidationError);

  DatasetManifest bad_unit = manifest;
  bad_unit.unit = "frames";
  CHECK_THROWS_AS(validate_manifest(bad_unit), ValidationError);
}

TEST_CASE("seconds manifests quantize ground truth onto the segment grid") {
  const fs::path dir = scratch_dir("seconds_manifest");
  std::ofstream out(dir / "manifest.json");
  out << R"({
    "version": 1,
    "unit": "seconds",
    "segment_seconds": 0.5,
    "num_classes": 2,
    "records": [
      {"video_id": "ext0",
       "features": {"rgb": "ext0.auf"},
       "label": [1.0, 0.0],
       "ground_truth": [{"class_id": 0, "start": 1.0, "end": 3.0}]}
    ]
  })";
  out.close();
  const DatasetManifest manifest = load_manifest(dir / "manifest.json");
  REQUIRE(manifest.records.size() == 1);
  const GtSpan& g = manifest.records.front().ground_truth.front();
  CHECK(g.start == 2);  // 1.0s / 0.5s
  CHECK(g.end == 5);    // 3.0s covers segments [2, 5]
  CHECK(manifest.unit == "segments");
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
  const fs::path dir = scratch_dir("checkpoint");
  const ModelDims dims{8, 4, 2, 3, 2, 2, 3};
  const ModelParams params = ModelParams::random_init(dims, 5);
  save_checkpoint(dir / "model.aumn", dims, params);
  const auto [dims2, params2] = load_checkpoint(dir / "model.aumn");
  CHECK(dims2.D == dims.D);
  CHECK(dims2.kernel == dims.kernel);
  CHECK((params.W_emb - params2.W_emb).cwiseAbs().maxCoeff() == 0.0);
  CHECK((params.M - params2.M).cwiseAbs().maxCoeff() == 0.0);
  CHECK((params.b_Q - params2.b_Q).cwiseAbs().maxCoeff() == 0.0);

  {
    std::ofstream bad(dir / "bad.aumn", std::ios::binary);
    bad << "NOPE" << std::string(32, '\0');
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.aumn"), BadMagicError);

  const auto bytes = slurp(dir / "model.aumn");
  {
    std::ofstream trunc(dir / "trunc.aumn", std::ios::binary);
    trunc.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.aumn"), TruncatedFileError);
}
