#include "aumn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aumn/numerics.hpp"
#include "aumn/parallel.hpp"
#include "aumn/rng.hpp"

namespace aumn {

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || !std::isfinite(cfg.learning_rate)) {
    throw ValidationError("train config: learning_rate must be positive");
  }
  if (cfg.batch_size < 1 || cfg.steps < 0) {
    throw ValidationError("train config: batch_size must be >= 1 and steps >= 0");
  }
  if (!(cfg.beta1 > 0 && cfg.beta1 < 1) || !(cfg.beta2 > 0 && cfg.beta2 < 1)) {
    throw ValidationError("train config: Adam betas must lie in (0, 1)");
  }
  if (!(cfg.epsilon > 0)) {
    throw ValidationError("train config: Adam epsilon must be positive");
  }
  validate(cfg.weights);
}

namespace {

void accumulate(GradientSet& into, const GradientSet& from) {
  into.W_emb += from.W_emb;
  into.b_emb += from.b_emb;
  into.M += from.M;
  into.W_K += from.W_K;
  into.b_K += from.b_K;
  into.W_V1 += from.W_V1;
  into.b_V1 += from.b_V1;
  into.W_V2 += from.W_V2;
  into.b_V2 += from.b_V2;
  into.W_Q += from.W_Q;
  into.b_Q += from.b_Q;
}

// Gradient of -sum_j y(j) log(max(yh(j), clamp)) through the softmax that
// produced yh, scaled by 1/B. Without the clamp this reduces to (yh - y)/B.
Vector prediction_gradient(const Vector& y_hat, const Vector& label, Real inv_batch) {
  Vector d_yh(y_hat.size());
  for (Index j = 0; j < y_hat.size(); ++j) {
    d_yh(j) = y_hat(j) > kLogClamp ? -label(j) / y_hat(j) : Real(0);
  }
  const Real dot = d_yh.dot(y_hat);
  return inv_batch * (y_hat.array() * (d_yh.array() - dot)).matrix();
}

// Reverse pass for one video. d_hom_p is the (already weighted) gradient of
// the homogeneity loss with respect to this video's occurrence distribution,
// empty when the term is disabled.
void per_video_backward(const Matrix& x, const Vector& label, const ForwardTrace& t,
                        const ModelParams& p, const ModelDims& d, const TrainConfig& cfg,
                        Index batch_size, const Vector& d_hom_p, GradientSet& g) {
  const Index l = x.rows();
  const Index F = d.F;
  const Index C = d.C;
  const Index K = d.K;
  const Real inv_b = 1.0 / static_cast<Real>(batch_size);
  const Real inv_l = 1.0 / static_cast<Real>(l);

  // Classification head: pooled logits -> attention + CAS rows.
  const Vector d_pool = prediction_gradient(t.y_hat, label, inv_b);
  Vector d_a = inv_l * (t.C_seg * d_pool);
  Matrix d_cseg = (inv_l * t.a) * d_pool.transpose();

  if (cfg.flags.sparsity) {
    d_a.array() += cfg.weights.gamma * inv_b;
  }

  // Foreground attention is a per-row max over S; ties go to the first
  // maximum, matching the forward scan.
  Matrix d_S = Matrix::Zero(l, K);
  for (Index ti = 0; ti < l; ++ti) {
    Index arg = 0;
    t.S.row(ti).maxCoeff(&arg);
    d_S(ti, arg) += d_a(ti);
  }

  if (d_hom_p.size() > 0) {
    // Occurrence distribution: softmax over column sums of S, identical
    // gradient for every segment row.
    const Vector occ = softmax(t.S.colwise().sum().transpose());
    const Real dot = d_hom_p.dot(occ);
    const Vector d_colsum = (occ.array() * (d_hom_p.array() - dot)).matrix();
    d_S.rowwise() += d_colsum.transpose();
  }

  // CAS rows: C_seg(t,:) = X_s(t) W_cls(t) with W_cls(t) mapped from V_O.
  Matrix d_Xs = Matrix::Zero(l, F);
  Matrix d_VO = Matrix::Zero(l, C * F);
  for (Index ti = 0; ti < l; ++ti) {
    Eigen::Map<const Eigen::MatrixXd> w(t.V_O.data() + ti * t.V_O.cols(), F, C);
    d_Xs.row(ti) = (w * d_cseg.row(ti).transpose()).transpose();
    for (Index c = 0; c < C; ++c) {
      d_VO.row(ti).segment(c * F, F) = d_cseg(ti, c) * t.X_s.row(ti);
    }
  }

  // V_O = S V_M.
  d_S.noalias() += d_VO * t.V_M.transpose();
  Matrix d_VM = t.S.transpose() * d_VO;

  // S = sigmoid(Q K_M^T / scale); fold the scale into the preactivation grad.
  const Real scale = std::sqrt(static_cast<Real>(t.Q.cols()));
  Matrix d_zs = (d_S.array() * t.S.array() * (1.0 - t.S.array())).matrix() / scale;
  Matrix d_Q = d_zs * t.K_M;
  Matrix d_KM = d_zs.transpose() * t.Q;

  // Self-attention X_s = (A + I) X_e with A = softmax_rows(Q Q^T / scale).
  Matrix d_Xe;
  if (t.self_attention) {
    Matrix d_A = d_Xs * t.X_e.transpose();
    d_Xe = t.A_self.transpose() * d_Xs + d_Xs;
    Matrix d_za(l, l);
    for (Index ti = 0; ti < l; ++ti) {
      const Real row_dot = d_A.row(ti).dot(t.A_self.row(ti));
      d_za.row(ti) = (t.A_self.row(ti).array() * (d_A.row(ti).array() - row_dot)).matrix();
    }
    d_za /= scale;
    d_Q.noalias() += (d_za + d_za.transpose()) * t.Q;
  } else {
    d_Xe = d_Xs;
  }

  // Q = X_e W_Q + b_Q.
  d_Xe.noalias() += d_Q * p.W_Q.transpose();
  g.W_Q.noalias() += t.X_e.transpose() * d_Q;
  g.b_Q += d_Q.colwise().sum().transpose();

  // Memory encoders, per-video contribution.
  g.W_K.noalias() += p.M.transpose() * d_KM;
  g.b_K += d_KM.colwise().sum().transpose();
  g.M.noalias() += d_KM * p.W_K.transpose();

  Matrix d_hr = d_VM * p.W_V2.transpose();
  g.W_V2.noalias() += relu(t.H_v).transpose() * d_VM;
  g.b_V2 += d_VM.colwise().sum().transpose();
  Matrix d_h = (d_hr.array() * (t.H_v.array() > 0).cast<Real>()).matrix();
  g.W_V1.noalias() += p.M.transpose() * d_h;
  g.b_V1 += d_h.colwise().sum().transpose();
  g.M.noalias() += d_h * p.W_V1.transpose();

  // Embedding conv; X_e = relu(z), mask recovered from the activation.
  Matrix d_z = (d_Xe.array() * (t.X_e.array() > 0).cast<Real>()).matrix();
  g.b_emb += d_z.colwise().sum().transpose();
  const Index pad = d.kernel / 2;
  for (Index j = 0; j < d.kernel; ++j) {
    const Index off = j - pad;
    const Index n = l - std::abs(off);
    if (n <= 0) continue;
    g.W_emb.middleRows(j * d.D, d.D).noalias() +=
        x.middleRows(std::max<Index>(0, off), n).transpose() *
        d_z.middleRows(std::max<Index>(0, -off), n);
  }
}

void check_batch(const std::vector<BatchItem>& batch) {
  if (batch.empty()) {
    throw ValidationError("batch must be nonempty");
  }
  for (const BatchItem& item : batch) {
    if (item.features == nullptr || item.label == nullptr) {
      throw ValidationError("batch item missing features or label");
    }
  }
}

LossComponents components_from_traces(const std::vector<BatchItem>& batch,
                                      const std::vector<ForwardTrace>& traces,
                                      const ModelParams& params, const TrainConfig& cfg,
                                      std::vector<Vector>* occ_out) {
  std::vector<Vector> y_hat(traces.size());
  std::vector<Vector> labels(traces.size());
  std::vector<Vector> attn(traces.size());
  std::vector<Vector> occ(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    y_hat[i] = traces[i].y_hat;
    labels[i] = *batch[i].label;
    attn[i] = traces[i].a;
    occ[i] = occurrence_probability(traces[i].S);
  }
  const Real cls = classification_loss(y_hat, labels);
  const Real div = diversity_loss(params.M);
  const Real hom = homogeneity_loss(occ);
  const Real spa = sparsity_loss(attn);
  if (occ_out != nullptr) *occ_out = std::move(occ);
  return total_loss(cls, div, hom, spa, cfg.weights, cfg.flags);
}

[[noreturn]] void throw_non_finite(const ModelParams& params,
                                   const std::vector<ForwardTrace>& traces) {
  std::string first;
  params.for_each_tensor([&](const char* name, const auto& tensor) {
    if (first.empty() && !tensor.allFinite()) first = std::string("params.") + name;
  });
  if (first.empty()) {
    for (std::size_t i = 0; i < traces.size() && first.empty(); ++i) {
      const ForwardTrace& t = traces[i];
      auto probe = [&](const char* name, const auto& tensor) {
        if (first.empty() && tensor.size() > 0 && !tensor.allFinite()) {
          first = "trace[" + std::to_string(i) + "]." + name;
        }
      };
      probe("X_e", t.X_e);
      probe("Q", t.Q);
      probe("K_M", t.K_M);
      probe("V_M", t.V_M);
      probe("A_self", t.A_self);
      probe("X_s", t.X_s);
      probe("S", t.S);
      probe("V_O", t.V_O);
      probe("C_seg", t.C_seg);
      probe("a", t.a);
      probe("y_hat", t.y_hat);
    }
  }
  if (first.empty()) first = "(loss only)";
  throw NumericError("non-finite total loss; first non-finite tensor: " + first);
}

}  // namespace

LossComponents batch_loss(const std::vector<BatchItem>& batch, const ModelParams& params,
                          const ModelDims& dims, const TrainConfig& cfg) {
  check_batch(batch);
  std::vector<ForwardTrace> traces(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    traces[i] = forward(*batch[i].features, params, dims, cfg.flags.self_attention);
  }
  return components_from_traces(batch, traces, params, cfg, nullptr);
}

std::pair<LossComponents, GradientSet> backward(const std::vector<BatchItem>& batch,
                                                const ModelParams& params, const ModelDims& dims,
                                                const TrainConfig& cfg, int threads) {
  check_batch(batch);
  const Index b = static_cast<Index>(batch.size());

  std::vector<ForwardTrace> traces(batch.size());
  parallel_for(b, threads, [&](Index i) {
    traces[i] = forward(*batch[i].features, params, dims, cfg.flags.self_attention);
  });

  std::vector<Vector> occ;
  const LossComponents comps = components_from_traces(batch, traces, params, cfg, &occ);
  if (!std::isfinite(comps.total)) {
    throw_non_finite(params, traces);
  }

  // Homogeneity couples the batch through the mean occurrence distribution;
  // its per-video gradient is one shared vector.
  Vector d_hom_p;
  if (cfg.flags.homogeneity) {
    Vector mean = Vector::Zero(dims.K);
    for (const Vector& p : occ) mean += p;
    mean /= static_cast<Real>(b);
    const Real norm = mean.norm();
    if (norm > 0) {
      d_hom_p = (cfg.weights.beta / (norm * static_cast<Real>(b))) * mean;
    }
  }

  std::vector<GradientSet> partial(batch.size());
  parallel_for(b, threads, [&](Index i) {
    partial[i] = GradientSet::zeros(dims);
    per_video_backward(*batch[i].features, *batch[i].label, traces[i], params, dims, cfg, b,
                       d_hom_p, partial[i]);
  });

  GradientSet grads = std::move(partial[0]);
  for (Index i = 1; i < b; ++i) accumulate(grads, partial[i]);

  if (cfg.flags.diversity) {
    // d||G||_F/dM = 2 (G/||G||) M for the symmetric G = M M^T - I; at the
    // orthonormal stationary point the subgradient is taken as zero.
    Matrix gram = params.M * params.M.transpose();
    gram -= Matrix::Identity(dims.K, dims.K);
    const Real norm = gram.norm();
    if (norm > 0) {
      grads.M.noalias() += (2.0 * cfg.weights.alpha / norm) * (gram * params.M);
    }
  }
  return {comps, std::move(grads)};
}

AdamState AdamState::init(const ModelDims& dims) {
  AdamState st;
  st.m = GradientSet::zeros(dims);
  st.v = GradientSet::zeros(dims);
  st.step = 0;
  return st;
}

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg) {
  state.step += 1;
  const Real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Real>(state.step));
  const Real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Real>(state.step));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square();
    p.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
  };
  update(params.W_emb, grads.W_emb, state.m.W_emb, state.v.W_emb);
  update(params.b_emb, grads.b_emb, state.m.b_emb, state.v.b_emb);
  update(params.M, grads.M, state.m.M, state.v.M);
  update(params.W_K, grads.W_K, state.m.W_K, state.v.W_K);
  update(params.b_K, grads.b_K, state.m.b_K, state.v.b_K);
  update(params.W_V1, grads.W_V1, state.m.W_V1, state.v.W_V1);
  update(params.b_V1, grads.b_V1, state.m.b_V1, state.v.b_V1);
  update(params.W_V2, grads.W_V2, state.m.W_V2, state.v.W_V2);
  update(params.b_V2, grads.b_V2, state.m.b_V2, state.v.b_V2);
  update(params.W_Q, grads.W_Q, state.m.W_Q, state.v.W_Q);
  update(params.b_Q, grads.b_Q, state.m.b_Q, state.v.b_Q);
}

TrainResult train(const std::vector<TrainingVideo>& dataset, const ModelDims& dims,
                  const TrainConfig& cfg, int threads) {
  validate(dims);
  validate(cfg);
  if (dataset.empty()) {
    throw ValidationError("train: dataset must be nonempty");
  }
  TrainResult result;
  result.params = ModelParams::random_init(dims, cfg.seed);
  AdamState state = AdamState::init(dims);
  Rng shuffler(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // force a shuffle before the first batch

  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<BatchItem> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (Index step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    for (Index k = 0; k < cfg.batch_size; ++k) {
      if (cursor == order.size()) {
        shuffler.shuffle(order);
        cursor = 0;
      }
      const TrainingVideo& video = dataset[order[cursor++]];
      batch.push_back({&video.features, &video.label});
    }
    auto [comps, grads] = backward(batch, result.params, dims, cfg, threads);
    adam_step(result.params, grads, state, cfg);
    result.history.push_back({step, comps});
  }
  return result;
}

FdReport compare_to_finite_differences(const std::vector<BatchItem>& batch, ModelParams params,
                                       const ModelDims& dims, const TrainConfig& cfg,
                                       const GradientSet& analytic, Real h, Real tolerance) {
  if (!(h > 0)) {
    throw ValidationError("finite differences: h must be positive");
  }
  FdReport report;
  report.tolerance = tolerance;

  std::vector<std::pair<const char*, Real*>> slots;
  std::vector<std::pair<const char*, const Real*>> grad_slots;
  std::vector<Index> sizes;
  params.for_each_tensor([&](const char* name, auto& tensor) {
    slots.emplace_back(name, tensor.data());
    sizes.push_back(tensor.size());
  });
  analytic.for_each_tensor(
      [&](const char* name, const auto& tensor) { grad_slots.emplace_back(name, tensor.data()); });

  for (std::size_t ti = 0; ti < slots.size(); ++ti) {
    Real* data = slots[ti].second;
    const Real* grad = grad_slots[ti].second;
    Real worst = 0;
    for (Index i = 0; i < sizes[ti]; ++i) {
      const Real saved = data[i];
      data[i] = saved + h;
      const Real up = batch_loss(batch, params, dims, cfg).total;
      data[i] = saved - h;
      const Real down = batch_loss(batch, params, dims, cfg).total;
      data[i] = saved;
      const Real fd = (up - down) / (2.0 * h);
      const Real a = grad[i];
      const Real rel = std::abs(a - fd) / std::max({Real(1), std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
    report.tensors.push_back({slots[ti].first, worst});
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

FdReport finite_difference_check(const ModelParams& params, const ModelDims& dims,
                                 const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                                 Real h, Real tolerance) {
  auto [comps, grads] = backward(batch, params, dims, cfg, 1);
  (void)comps;
  return compare_to_finite_differences(batch, params, dims, cfg, grads, h, tolerance);
}

std::vector<BatchItem> AuditInstance::items() const {
  std::vector<BatchItem> batch(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    batch[i] = {&features[i], &labels[i]};
  }
  return batch;
}

AuditInstance make_audit_instance(const ModelDims& dims, Index segments, Index batch_size,
                                  std::uint64_t seed) {
  validate(dims);
  if (segments < 1 || batch_size < 1) {
    throw ValidationError("audit instance: segments and batch_size must be >= 1");
  }
  AuditInstance inst;
  inst.params = ModelParams::random_init(dims, seed);
  Rng rng(seed ^ 0xa02bdbf7bb3c0a7ull);
  for (Vector* b : {&inst.params.b_emb, &inst.params.b_K, &inst.params.b_V1, &inst.params.b_V2,
                    &inst.params.b_Q}) {
    for (Index i = 0; i < b->size(); ++i) (*b)(i) = rng.uniform(-0.5, 0.5);
  }
  for (Index v = 0; v < batch_size; ++v) {
    Matrix x(segments, dims.D);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Vector y = Vector::Zero(dims.C);
    if (dims.C >= 2 && v % 2 == 1) {
      const Index first = rng.uniform_int(dims.C);
      Index second = rng.uniform_int(dims.C - 1);
      if (second >= first) ++second;
      y(first) = 0.5;
      y(second) = 0.5;
    } else {
      y(rng.uniform_int(dims.C)) = 1.0;
    }
    inst.features.push_back(std::move(x));
    inst.labels.push_back(std::move(y));
  }
  return inst;
}

}  // namespace aumn
