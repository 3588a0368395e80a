#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aumn/evaluation.hpp"
#include "aumn/types.hpp"

// Synthetic action-unit dataset generation, binary feature files and dataset
// manifests: the desk-scale stand-in for pre-extracted video features.

namespace aumn {

struct SyntheticSpec {
  Index U = 5;                   // latent unit prototypes
  Index C = 4;                   // classes
  Index D = 32;                  // feature dim
  Index videos = 200;
  Index segments_per_video = 60;
  Index instances_per_video = 2;
  Real action_fraction = 0.2;
  Real noise_std = 0.3;
  std::uint64_t seed = 11;
  // 2-3 unit ids per class; at least one unit must be shared by two classes.
  std::vector<std::vector<int>> units_per_class;
};

// Overlapping round-robin unit assignment: class c gets {c mod U, (c+1) mod U},
// so neighboring classes share a unit.
std::vector<std::vector<int>> default_units_per_class(Index num_classes, Index num_units);

void validate(const SyntheticSpec& spec);

struct GtSpan {
  int class_id = 0;
  Index start = 0;
  Index end = 0;
};

struct VideoRecord {
  std::string video_id;
  std::map<std::string, std::string> feature_paths;  // stream name -> relative path
  Vector label;                                      // length C, sums to 1
  std::vector<GtSpan> ground_truth;
  std::vector<int> segment_labels;  // per-segment foreground mask, synthetic only
};

struct DatasetManifest {
  int version = 1;
  std::string unit = "segments";  // or "seconds"
  // Required for "seconds" manifests: the segment duration used to quantize
  // ground-truth boundaries onto the feature grid at load time.
  Real segment_seconds = 0;
  Index num_classes = 0;
  std::vector<VideoRecord> records;
  // Directory feature paths resolve against; set on load/generate.
  std::filesystem::path base_dir;
};

// Feature files: magic "AUF1", u32 rows, u32 cols, then row-major 64-bit
// little-endian floats. Round-trips are bit-exact.
void write_features(const std::filesystem::path& path, const Matrix& features);
Matrix read_features(const std::filesystem::path& path);

// Manifest JSON on disk; validation names the offending record. Feature file
// existence is checked lazily at read time, not here.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
void validate_manifest(const DatasetManifest& manifest);

// Draws unit-norm, mutually near-orthogonal unit prototypes plus a distinct
// background direction, renders each video's latent unit script into per-
// segment features for two independent-noise streams ("rgb", "flow"), and
// writes everything under out_dir. Deterministic for a fixed spec.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Flattens manifest ground truth for the evaluator.
std::vector<GroundTruthInstance> all_ground_truth(const DatasetManifest& manifest);

Matrix read_stream_features(const DatasetManifest& manifest, const VideoRecord& record,
                            const std::string& stream);

}  // namespace aumn
