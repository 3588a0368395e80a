#pragma once

#include <vector>

#include "aumn/types.hpp"

// The four training objectives and their weighted sum. Each auxiliary term is
// independently toggleable so ablation rows map one-to-one to flag settings.

namespace aumn {

struct LossWeights {
  Real alpha = 0.01;  // diversity
  Real beta = 0.02;   // homogeneity
  Real gamma = 0.05;  // sparsity
};

struct AblationFlags {
  bool diversity = true;
  bool homogeneity = true;
  bool sparsity = true;
  bool self_attention = true;
};

struct LossComponents {
  Real cls = 0;
  Real diversity = 0;
  Real homogeneity = 0;
  Real sparsity = 0;
  Real total = 0;
};

void validate(const LossWeights& w);

// Predictions are clamped at this floor before the log so saturated outputs
// cannot produce -inf.
inline constexpr Real kLogClamp = 1e-12;

// Mean cross-entropy between predictions and video labels over the batch.
Real classification_loss(const std::vector<Vector>& y_hat_batch,
                         const std::vector<Vector>& y_batch);

// ||M M^T - I||_F; zero exactly when the template rows are orthonormal.
Real diversity_loss(const Matrix& memory);

// Softmax over templates of the time-summed similarities, Eq-style occurrence
// distribution for one video.
Vector occurrence_probability(const Matrix& S);

// L2 norm of the batch-mean occurrence distribution; minimal (1/sqrt(K)) when
// that mean is uniform.
Real homogeneity_loss(const std::vector<Vector>& p_batch);

// Batch mean of the per-video L1 attention mass. Deliberately not normalized
// by video length.
Real sparsity_loss(const std::vector<Vector>& a_batch);

// cls + alpha*d + beta*h + gamma*s with disabled terms contributing exactly 0.
// Fills in and returns components.total.
LossComponents total_loss(Real cls, Real diversity, Real homogeneity, Real sparsity,
                          const LossWeights& weights, const AblationFlags& flags);

}  // namespace aumn
