#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aumn/data.hpp"
#include "aumn/inference.hpp"
#include "aumn/model.hpp"
#include "aumn/training.hpp"

// Run configuration: one JSON file with sections per module plus command-line
// overrides of the form section.key=value. Every field is validated against
// its module's invariants before any work starts.

namespace aumn {

struct SynthSection {
  SyntheticSpec spec;
  Index videos_train = 200;
  Index videos_test = 50;
};

struct GradcheckSection {
  ModelDims dims{8, 4, 2, 3, 2, 2, 3};  // D F C K m r kernel
  Index segments = 6;
  Index batch = 2;
  Index instances = 20;
  Real h = 1e-5;
  Real tolerance = 1e-4;
};

struct RunConfig {
  ModelDims model{32, 32, 4, 7, 4, 8, 3};
  TrainConfig train;
  Real gamma_rgb = 0.05;
  Real gamma_flow = 0.03;
  InferenceConfig inference;
  SynthSection synth;
  GradcheckSection gradcheck;
  std::vector<Real> eval_iou_thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  int parallelism = 0;  // 0 = all cores for per-video work
};

// Loads the JSON config (built-in defaults when path is empty), applies the
// overrides, validates everything. Unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

// Picks the per-stream loss weights ("rgb" or "flow").
LossWeights stream_weights(const RunConfig& cfg, const std::string& stream);

void validate(const RunConfig& cfg);

}  // namespace aumn
