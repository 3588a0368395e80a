#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aumn/inference.hpp"
#include "aumn/types.hpp"

// Detection-style mAP@IoU scoring of proposal sets against ground truth, plus
// an ROC-AUC diagnostic for the foreground attention on labeled segments.

namespace aumn {

struct GroundTruthInstance {
  std::string video_id;
  int class_id = 0;
  Index start = 0;  // inclusive
  Index end = 0;    // inclusive, >= start
};

struct DetectionRecord {
  std::string video_id;
  Proposal prop;
};

// Average precision for one class at one IoU threshold: proposals in score
// order greedily match the highest-IoU unmatched ground truth of the same
// video with IoU >= threshold, then the all-point interpolated area under the
// precision envelope. Returns nullopt when the class has no ground truth.
std::optional<Real> average_precision(const std::vector<DetectionRecord>& detections,
                                      const std::vector<GroundTruthInstance>& ground_truth,
                                      int class_id, Real iou_threshold);

struct MeanApResult {
  std::vector<Real> thresholds;
  std::vector<Real> map_values;      // one per threshold
  Real average = 0;                  // over 0.1:0.1:0.5 when present, else all
  std::vector<int> classes;          // classes entering the mean
  std::vector<int> skipped_classes;  // predicted classes with no ground truth
};

// Mean over classes with at least one ground-truth instance, per threshold.
MeanApResult mean_ap(const std::vector<DetectionRecord>& detections,
                     const std::vector<GroundTruthInstance>& ground_truth,
                     const std::vector<Real>& iou_thresholds);

// ROC AUC of the attention as a foreground score over binary segment labels;
// ties count half. Undefined (nullopt) when only one class is present.
std::optional<Real> attention_auc(const Vector& attention, const std::vector<int>& segment_labels);

}  // namespace aumn
