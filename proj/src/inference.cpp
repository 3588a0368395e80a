#include "aumn/inference.hpp"

#include <algorithm>
#include <cmath>

#include "aumn/numerics.hpp"

namespace aumn {

void validate(const InferenceConfig& cfg) {
  auto in_unit = [](Real v) { return v >= 0 && v <= 1; };
  if (!in_unit(cfg.eta_cls) || !in_unit(cfg.nms_iou) || !in_unit(cfg.theta) ||
      (!cfg.eta_act_is_mean && !in_unit(cfg.eta_act_value))) {
    throw ValidationError("inference config: thresholds and theta must lie in [0, 1]");
  }
  if (!(cfg.segment_seconds > 0)) {
    throw ValidationError("inference config: segment_seconds must be positive");
  }
}

Matrix class_activation_sequence(const ForwardTrace& trace) {
  return softmax_rows(trace.C_seg);
}

std::vector<int> select_classes(const Vector& y_hat, Real eta_cls) {
  std::vector<int> classes;
  for (Index c = 0; c < y_hat.size(); ++c) {
    if (y_hat(c) >= eta_cls) classes.push_back(static_cast<int>(c));
  }
  return classes;
}

std::vector<std::pair<Index, Index>> generate_proposals(const Vector& a, Real eta_act) {
  std::vector<std::pair<Index, Index>> runs;
  Index start = -1;
  for (Index t = 0; t < a.size(); ++t) {
    if (a(t) >= eta_act) {
      if (start < 0) start = t;
    } else if (start >= 0) {
      runs.emplace_back(start, t - 1);
      start = -1;
    }
  }
  if (start >= 0) runs.emplace_back(start, a.size() - 1);
  return runs;
}

Real score_proposal(const Proposal& prop, const std::vector<StreamSignals>& streams, Real theta) {
  if (streams.empty() || streams.size() > 2) {
    throw ValidationError("score_proposal: expected one or two streams");
  }
  const Index l = streams.front().attention->size();
  for (const StreamSignals& s : streams) {
    if (s.attention == nullptr || s.cas == nullptr) {
      throw ValidationError("score_proposal: missing stream signals");
    }
    if (s.attention->size() != l || s.cas->rows() != l) {
      throw ValidationError("score_proposal: stream length mismatch");
    }
  }
  if (prop.start < 0 || prop.end < prop.start || prop.end >= l) {
    throw ValidationError("score_proposal: proposal outside the segment range");
  }
  const Real w0 = streams.size() == 1 ? Real(1) : theta;
  const Real w1 = 1.0 - theta;
  Real sum = 0;
  for (Index t = prop.start; t <= prop.end; ++t) {
    sum += w0 * (*streams[0].attention)(t) * (*streams[0].cas)(t, prop.class_id);
    if (streams.size() == 2) {
      sum += w1 * (*streams[1].attention)(t) * (*streams[1].cas)(t, prop.class_id);
    }
  }
  return sum / static_cast<Real>(prop.length());
}

Real temporal_iou(const Proposal& p1, const Proposal& p2) {
  const Index inter =
      std::max<Index>(0, std::min(p1.end, p2.end) - std::max(p1.start, p2.start) + 1);
  const Index uni = p1.length() + p2.length() - inter;
  return static_cast<Real>(inter) / static_cast<Real>(uni);
}

namespace {

bool nms_order(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return a.end < b.end;
}

}  // namespace

std::vector<Proposal> nms(std::vector<Proposal> proposals, Real iou_threshold) {
  std::sort(proposals.begin(), proposals.end(), nms_order);
  std::vector<Proposal> kept;
  for (const Proposal& candidate : proposals) {
    bool suppressed = false;
    for (const Proposal& k : kept) {
      if (temporal_iou(candidate, k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

std::vector<Proposal> localize(const std::vector<ForwardTrace>& stream_traces,
                               const InferenceConfig& cfg) {
  if (stream_traces.empty() || stream_traces.size() > 2) {
    throw ValidationError("localize: expected one or two stream traces");
  }
  const Index l = stream_traces.front().a.size();
  for (const ForwardTrace& t : stream_traces) {
    if (t.a.size() != l) {
      throw ValidationError("localize: streams must share one segmentation");
    }
  }

  Vector y_mean = stream_traces.front().y_hat;
  for (std::size_t s = 1; s < stream_traces.size(); ++s) y_mean += stream_traces[s].y_hat;
  y_mean /= static_cast<Real>(stream_traces.size());
  const std::vector<int> classes = select_classes(y_mean, cfg.eta_cls);
  if (classes.empty()) return {};

  // Attention runs pooled across streams; duplicates fall to NMS.
  std::vector<std::pair<Index, Index>> runs;
  std::vector<Matrix> cas(stream_traces.size());
  std::vector<StreamSignals> signals(stream_traces.size());
  for (std::size_t s = 0; s < stream_traces.size(); ++s) {
    const ForwardTrace& t = stream_traces[s];
    const Real eta = cfg.eta_act_is_mean ? t.a.mean() : cfg.eta_act_value;
    auto stream_runs = generate_proposals(t.a, eta);
    runs.insert(runs.end(), stream_runs.begin(), stream_runs.end());
    cas[s] = class_activation_sequence(t);
    signals[s] = {&t.a, &cas[s]};
  }

  std::vector<Proposal> result;
  for (int c : classes) {
    std::vector<Proposal> candidates;
    candidates.reserve(runs.size());
    for (const auto& [start, end] : runs) {
      Proposal prop{c, start, end, 0.0};
      prop.score = score_proposal(prop, signals, cfg.theta);
      candidates.push_back(prop);
    }
    std::vector<Proposal> survivors = nms(std::move(candidates), cfg.nms_iou);
    result.insert(result.end(), survivors.begin(), survivors.end());
  }
  std::sort(result.begin(), result.end(), [](const Proposal& a, const Proposal& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return nms_order(a, b);
  });
  return result;
}

}  // namespace aumn
