#include "aumn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "aumn/numerics.hpp"

namespace aumn {

void validate(const LossWeights& w) {
  if (!(w.alpha >= 0) || !(w.beta >= 0) || !(w.gamma >= 0) || !std::isfinite(w.alpha) ||
      !std::isfinite(w.beta) || !std::isfinite(w.gamma)) {
    throw ValidationError("loss weights must be finite and nonnegative");
  }
}

Real classification_loss(const std::vector<Vector>& y_hat_batch,
                         const std::vector<Vector>& y_batch) {
  if (y_hat_batch.empty() || y_hat_batch.size() != y_batch.size()) {
    throw ValidationError("classification_loss: batch must be nonempty and aligned");
  }
  Real sum = 0;
  for (std::size_t i = 0; i < y_hat_batch.size(); ++i) {
    const Vector& yh = y_hat_batch[i];
    const Vector& y = y_batch[i];
    if (yh.size() != y.size()) {
      throw ValidationError("classification_loss: prediction/label size mismatch");
    }
    for (Index j = 0; j < y.size(); ++j) {
      sum -= y(j) * std::log(std::max(yh(j), kLogClamp));
    }
  }
  return sum / static_cast<Real>(y_hat_batch.size());
}

Real diversity_loss(const Matrix& memory) {
  if (memory.rows() < 1) {
    throw ValidationError("diversity_loss: memory must have at least one template");
  }
  Matrix gram = memory * memory.transpose();
  gram -= Matrix::Identity(memory.rows(), memory.rows());
  return gram.norm();
}

Vector occurrence_probability(const Matrix& S) {
  if (S.rows() < 1) {
    throw ValidationError("occurrence_probability: need at least one segment");
  }
  return softmax(S.colwise().sum().transpose());
}

Real homogeneity_loss(const std::vector<Vector>& p_batch) {
  if (p_batch.empty()) {
    throw ValidationError("homogeneity_loss: empty batch");
  }
  Vector mean = Vector::Zero(p_batch.front().size());
  for (const Vector& p : p_batch) mean += p;
  mean /= static_cast<Real>(p_batch.size());
  return mean.norm();
}

Real sparsity_loss(const std::vector<Vector>& a_batch) {
  if (a_batch.empty()) {
    throw ValidationError("sparsity_loss: empty batch");
  }
  Real sum = 0;
  for (const Vector& a : a_batch) sum += a.lpNorm<1>();
  return sum / static_cast<Real>(a_batch.size());
}

LossComponents total_loss(Real cls, Real diversity, Real homogeneity, Real sparsity,
                          const LossWeights& weights, const AblationFlags& flags) {
  LossComponents c;
  c.cls = cls;
  c.diversity = diversity;
  c.homogeneity = homogeneity;
  c.sparsity = sparsity;
  c.total = cls;
  if (flags.diversity) c.total += weights.alpha * diversity;
  if (flags.homogeneity) c.total += weights.beta * homogeneity;
  if (flags.sparsity) c.total += weights.gamma * sparsity;
  return c;
}

}  // namespace aumn
