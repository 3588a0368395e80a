#include "aumn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace aumn {

namespace {

// Total order on detections: score descending, then video/start/end/class so
// evaluation is deterministic under score ties.
bool detection_order(const DetectionRecord& a, const DetectionRecord& b) {
  if (a.prop.score != b.prop.score) return a.prop.score > b.prop.score;
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  if (a.prop.start != b.prop.start) return a.prop.start < b.prop.start;
  if (a.prop.end != b.prop.end) return a.prop.end < b.prop.end;
  return a.prop.class_id < b.prop.class_id;
}

Real span_iou(Index s1, Index e1, Index s2, Index e2) {
  const Index inter = std::max<Index>(0, std::min(e1, e2) - std::max(s1, s2) + 1);
  const Index uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
  return static_cast<Real>(inter) / static_cast<Real>(uni);
}

}  // namespace

std::optional<Real> average_precision(const std::vector<DetectionRecord>& detections,
                                      const std::vector<GroundTruthInstance>& ground_truth,
                                      int class_id, Real iou_threshold) {
  std::vector<const GroundTruthInstance*> gts;
  for (const GroundTruthInstance& g : ground_truth) {
    if (g.class_id == class_id) gts.push_back(&g);
  }
  if (gts.empty()) return std::nullopt;

  std::vector<DetectionRecord> dets;
  for (const DetectionRecord& d : detections) {
    if (d.prop.class_id == class_id) dets.push_back(d);
  }
  std::sort(dets.begin(), dets.end(), detection_order);

  std::vector<bool> matched(gts.size(), false);
  std::vector<bool> is_tp(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Real best_iou = -1;
    std::size_t best_gt = 0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (matched[j] || gts[j]->video_id != dets[i].video_id) continue;
      const Real iou = span_iou(dets[i].prop.start, dets[i].prop.end, gts[j]->start, gts[j]->end);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = j;
      }
    }
    if (best_iou >= iou_threshold) {
      matched[best_gt] = true;
      is_tp[i] = true;
    }
  }

  const Real n_gt = static_cast<Real>(gts.size());
  const std::size_t n = dets.size();
  std::vector<Real> precision(n), recall(n);
  Real tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (is_tp[k]) tp += 1;
    precision[k] = tp / static_cast<Real>(k + 1);
    recall[k] = tp / n_gt;
  }
  // All-point interpolation over the precision envelope.
  Real envelope = 0;
  Real ap = 0;
  for (std::size_t k = n; k-- > 0;) {
    envelope = std::max(envelope, precision[k]);
    const Real prev_recall = k == 0 ? Real(0) : recall[k - 1];
    ap += (recall[k] - prev_recall) * envelope;
  }
  return ap;
}

MeanApResult mean_ap(const std::vector<DetectionRecord>& detections,
                     const std::vector<GroundTruthInstance>& ground_truth,
                     const std::vector<Real>& iou_thresholds) {
  if (ground_truth.empty()) {
    throw ValidationError("mean_ap: ground truth must be nonempty");
  }
  MeanApResult out;
  out.thresholds = iou_thresholds;

  std::set<int> gt_classes;
  for (const GroundTruthInstance& g : ground_truth) gt_classes.insert(g.class_id);
  out.classes.assign(gt_classes.begin(), gt_classes.end());

  std::set<int> det_classes;
  for (const DetectionRecord& d : detections) det_classes.insert(d.prop.class_id);
  for (int c : det_classes) {
    if (gt_classes.count(c) == 0) out.skipped_classes.push_back(c);
  }

  for (Real thr : iou_thresholds) {
    Real sum = 0;
    for (int c : out.classes) {
      sum += average_precision(detections, ground_truth, c, thr).value();
    }
    out.map_values.push_back(sum / static_cast<Real>(out.classes.size()));
  }

  // Table-style AVG over 0.1:0.1:0.5 when those thresholds are present,
  // otherwise the mean over the requested list.
  Real avg_sum = 0;
  int avg_count = 0;
  for (Real want : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      if (std::abs(iou_thresholds[i] - want) < 1e-9) {
        avg_sum += out.map_values[i];
        ++avg_count;
        break;
      }
    }
  }
  if (avg_count == 5) {
    out.average = avg_sum / 5.0;
  } else if (!out.map_values.empty()) {
    Real s = 0;
    for (Real v : out.map_values) s += v;
    out.average = s / static_cast<Real>(out.map_values.size());
  }
  return out;
}

std::optional<Real> attention_auc(const Vector& attention,
                                  const std::vector<int>& segment_labels) {
  if (static_cast<std::size_t>(attention.size()) != segment_labels.size()) {
    throw ValidationError("attention_auc: score/label length mismatch");
  }
  const std::size_t n = segment_labels.size();
  std::size_t positives = 0;
  for (int v : segment_labels) positives += v != 0 ? 1 : 0;
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return attention(a) < attention(b); });

  // Mann-Whitney with mid-ranks for ties, which counts tied pairs as half.
  Real rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && attention(idx[j + 1]) == attention(idx[i])) ++j;
    const Real mid_rank = (static_cast<Real>(i + 1) + static_cast<Real>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (segment_labels[idx[k]] != 0) rank_sum_pos += mid_rank;
    }
    i = j + 1;
  }
  const Real p = static_cast<Real>(positives);
  const Real u = rank_sum_pos - p * (p + 1) / 2.0;
  return u / (p * static_cast<Real>(negatives));
}

}  // namespace aumn
