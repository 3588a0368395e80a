#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aumn/losses.hpp"
#include "aumn/model.hpp"

// Reverse-mode gradients through the forward pass and all four losses, Adam
// updates, the minibatch training loop and the finite-difference audit.

namespace aumn {

struct TrainConfig {
  Real learning_rate = 1e-4;
  Index batch_size = 32;
  Index steps = 1000;
  std::uint64_t seed = 1;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
  LossWeights weights;
  AblationFlags flags;
};

void validate(const TrainConfig& cfg);

// One training example: features are l x D with per-video l, the label is a
// length-C distribution.
struct BatchItem {
  const Matrix* features = nullptr;
  const Vector* label = nullptr;
};

// Loss components plus exact analytic gradients of the flagged total loss
// with respect to every parameter tensor. The memory M accumulates its three
// paths (Enc_K, Enc_V and the diversity regularizer).
std::pair<LossComponents, GradientSet> backward(const std::vector<BatchItem>& batch,
                                                const ModelParams& params, const ModelDims& dims,
                                                const TrainConfig& cfg, int threads = 1);

// Total loss only, shared by the finite-difference audit.
LossComponents batch_loss(const std::vector<BatchItem>& batch, const ModelParams& params,
                          const ModelDims& dims, const TrainConfig& cfg);

struct AdamState {
  GradientSet m;
  GradientSet v;
  std::int64_t step = 0;

  static AdamState init(const ModelDims& dims);
};

// Standard Adam with bias correction; deterministic given its inputs.
void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg);

struct TrainingVideo {
  std::string video_id;
  Matrix features;
  Vector label;
};

struct HistoryRow {
  Index step = 0;
  LossComponents components;
};

struct TrainResult {
  ModelParams params;
  std::vector<HistoryRow> history;
};

// Runs cfg.steps minibatch updates with seeded shuffling. Per-stream training
// is the caller's loop. Bit-reproducible for a fixed seed and config,
// independent of the thread count.
TrainResult train(const std::vector<TrainingVideo>& dataset, const ModelDims& dims,
                  const TrainConfig& cfg, int threads = 1);

struct FdReport {
  struct TensorRow {
    std::string name;
    Real max_rel_error = 0;
  };
  std::vector<TensorRow> tensors;
  Real max_rel_error = 0;
  Real tolerance = 0;
  bool pass = false;
};

// Per-entry relative error |analytic - fd| / max(1, |analytic|, |fd|),
// maximized per tensor, analytic gradients against central differences.
FdReport compare_to_finite_differences(const std::vector<BatchItem>& batch, ModelParams params,
                                       const ModelDims& dims, const TrainConfig& cfg,
                                       const GradientSet& analytic, Real h, Real tolerance);

// Computes the analytic gradients and audits them against central finite
// differences over every parameter entry.
FdReport finite_difference_check(const ModelParams& params, const ModelDims& dims,
                                 const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                                 Real h, Real tolerance);

// A seeded random instance for the gradient audit. Biases are randomized on
// top of the standard init: exact zeros leave dead ReLU segments whose
// similarity rows tie exactly, and the resulting max-pool kink sits right
// under the finite-difference probe.
struct AuditInstance {
  ModelParams params;
  std::vector<Matrix> features;
  std::vector<Vector> labels;

  std::vector<BatchItem> items() const;
};

AuditInstance make_audit_instance(const ModelDims& dims, Index segments, Index batch_size,
                                  std::uint64_t seed);

}  // namespace aumn
