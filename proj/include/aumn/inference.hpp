#pragma once

#include <utility>
#include <vector>

#include "aumn/model.hpp"
#include "aumn/types.hpp"

// Two-step localization: class thresholding on the video prediction, then
// attention-threshold proposal generation, confidence scoring with optional
// two-stream fusion, and class-wise NMS.

namespace aumn {

struct Proposal {
  int class_id = 0;
  Index start = 0;  // first segment, inclusive
  Index end = 0;    // last segment, inclusive
  Real score = 0;

  Index length() const { return end - start + 1; }
};

struct InferenceConfig {
  Real eta_cls = 0.1;
  bool eta_act_is_mean = true;  // per-video mean of the foreground attention
  Real eta_act_value = 0.5;    // used when eta_act_is_mean is false
  Real nms_iou = 0.3;
  Real theta = 0.3;  // RGB weight in two-stream fusion
  Real segment_seconds = 1.0;
};

void validate(const InferenceConfig& cfg);

// Per-segment softmax over classes of the CAS logits.
Matrix class_activation_sequence(const ForwardTrace& trace);

// Classes whose predicted confidence is at least eta_cls, ascending ids.
std::vector<int> select_classes(const Vector& y_hat, Real eta_cls);

// Maximal contiguous runs with a(t) >= eta_act, in temporal order.
std::vector<std::pair<Index, Index>> generate_proposals(const Vector& a, Real eta_act);

// One modality's inference-time signals over a shared segmentation.
struct StreamSignals {
  const Vector* attention = nullptr;  // length l
  const Matrix* cas = nullptr;        // l x C, rows softmaxed
};

// Mean over the proposal span of theta-weighted attention-times-CAS terms.
// Stream order is (RGB, FLOW); a single stream gets weight 1.
Real score_proposal(const Proposal& prop, const std::vector<StreamSignals>& streams, Real theta);

// Inclusive-segment IoU.
Real temporal_iou(const Proposal& p1, const Proposal& p2);

// Greedy suppression over same-class proposals: sort by score descending
// (ties: earlier start, then shorter), keep the head, drop anything with
// IoU > threshold against a kept proposal.
std::vector<Proposal> nms(std::vector<Proposal> proposals, Real iou_threshold);

// Full per-video localization over one or two stream traces.
std::vector<Proposal> localize(const std::vector<ForwardTrace>& stream_traces,
                               const InferenceConfig& cfg);

}  // namespace aumn
