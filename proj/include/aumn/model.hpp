#pragma once

#include <cstdint>
#include <utility>

#include "aumn/types.hpp"

// Action-unit memory model: temporal embedding, memory bank with key/value
// encoders, self-attention over segments, cross-attention reading of
// per-segment classifiers, foreground attention and video-level prediction.

namespace aumn {

struct ModelDims {
  Index D = 1024;   // input feature dim
  Index F = 512;    // embedded dim
  Index C = 20;     // class count
  Index K = 7;      // memory template count
  Index m = 4;      // key-reduction factor (keys have dim F/m)
  Index r = 128;    // Enc_V bottleneck dim
  Index kernel = 3; // temporal conv kernel width, odd

  Index key_dim() const { return F / m; }
  Index value_dim() const { return C * F; }
};

// Throws ValidationError unless all counts are >= 1, F is divisible by m and
// kernel is odd.
void validate(const ModelDims& dims);

// The memory bank is the K x F template matrix M.
using MemoryBank = Matrix;

// All learnable tensors. W_emb stacks the kernel taps as row blocks: tap j
// occupies rows [j*D, (j+1)*D). Also reused as the gradient container since a
// gradient set is shape-congruent with the parameters by construction.
struct ModelParams {
  Matrix W_emb;  // (kernel*D) x F
  Vector b_emb;  // F
  MemoryBank M;  // K x F
  Matrix W_K;    // F x F/m
  Vector b_K;    // F/m
  Matrix W_V1;   // F x r
  Vector b_V1;   // r
  Matrix W_V2;   // r x C*F
  Vector b_V2;   // C*F
  Matrix W_Q;    // F x F/m
  Vector b_Q;    // F/m

  // Visits every tensor in the fixed serialization order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("W_emb", self.W_emb);
    fn("b_emb", self.b_emb);
    fn("M", self.M);
    fn("W_K", self.W_K);
    fn("b_K", self.b_K);
    fn("W_V1", self.W_V1);
    fn("b_V1", self.b_V1);
    fn("W_V2", self.W_V2);
    fn("b_V2", self.b_V2);
    fn("W_Q", self.W_Q);
    fn("b_Q", self.b_Q);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, fn);
  }

  static ModelParams zeros(const ModelDims& dims);
  // Memory rows ~ N(0, 1/F); affine weights uniform scaled by fan-in; biases
  // zero. Deterministic for a fixed seed.
  static ModelParams random_init(const ModelDims& dims, std::uint64_t seed);
};

using GradientSet = ModelParams;

// Throws ValidationError if any tensor shape disagrees with dims.
void check_shapes(const ModelParams& params, const ModelDims& dims);

// Every intermediate of one forward pass, retained for the reverse pass and
// for inference.
struct ForwardTrace {
  bool self_attention = true;
  Matrix X_e;     // l x F embedded features
  Matrix Q;       // l x F/m queries
  Matrix K_M;     // K x F/m memory keys
  Matrix H_v;     // K x r Enc_V hidden preactivation
  Matrix V_M;     // K x C*F memory values
  Matrix A_self;  // l x l attention weights; empty when self_attention off
  Matrix X_s;     // l x F refined features
  Matrix S;       // l x K segment/template similarities
  Matrix V_O;     // l x C*F aggregated values
  Matrix C_seg;   // l x C per-segment class logits
  Vector a;       // l foreground attention
  Vector pooled;  // C attention-pooled logits
  Vector y_hat;   // C video-level class distribution
};

struct MemoryEncoding {
  Matrix K_M;  // K x F/m
  Matrix V_M;  // K x C*F
  Matrix H;    // K x r hidden preactivation
};

// Temporal convolution over the segment axis with same-length zero padding,
// bias, then ReLU. x is l x D, result l x F.
Matrix embed_features(const Matrix& x, const ModelParams& params, const ModelDims& dims);

// K_M = M W_K + b_K; V_M = relu(M W_V1 + b_V1) W_V2 + b_V2.
MemoryEncoding encode_memory(const ModelParams& params, const ModelDims& dims);

// A = softmax_rows(Q Q^T / sqrt(F/m)); X_s = (A + I) X_e.
std::pair<Matrix, Matrix> self_attention(const Matrix& X_e, const Matrix& Q);

// S = sigmoid(Q K_M^T / sqrt(F/m)), entries strictly inside (0, 1).
Matrix cross_similarity(const Matrix& Q, const Matrix& K_M);

// V_O = S V_M; row t reshapes to the F x C classifier of segment t with
// entry (f, c) at V_O(t, c*F + f).
Matrix read_values(const Matrix& S, const Matrix& V_M);
Matrix segment_classifier(const Matrix& V_O, Index t, Index F, Index C);

// a(t) = max_k S(t, k).
Vector foreground_attention(const Matrix& S);

struct Prediction {
  Matrix C_seg;   // l x C logits, row t = X_s(t) W_cls(t)
  Vector pooled;  // C
  Vector y_hat;   // C, sums to 1
};

// C_seg rows through the per-segment classifiers, then attention-weighted
// pooling and a softmax over classes.
Prediction video_prediction(const Matrix& X_s, const Matrix& V_O, const Vector& a, Index C);

ForwardTrace forward(const Matrix& x, const ModelParams& params, const ModelDims& dims,
                     bool use_self_attention);

}  // namespace aumn
