#include "aumn/model.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "aumn/numerics.hpp"
#include "test_util.hpp"

using namespace aumn;
using aumn::testing::random_matrix;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.D = 8;
  d.F = 4;
  d.C = 2;
  d.K = 3;
  d.m = 2;
  d.r = 2;
  d.kernel = 3;
  return d;
}

// Sliding-window convolution with explicit zero padding.
Matrix conv_oracle(const Matrix& x, const ModelParams& p, const ModelDims& d) {
  const Index l = x.rows();
  const Index pad = d.kernel / 2;
  Matrix padded = Matrix::Zero(l + 2 * pad, d.D);
  padded.middleRows(pad, l) = x;
  Matrix z(l, d.F);
  for (Index t = 0; t < l; ++t) {
    for (Index f = 0; f < d.F; ++f) {
      Real acc = p.b_emb(f);
      for (Index j = 0; j < d.kernel; ++j) {
        for (Index dd = 0; dd < d.D; ++dd) {
          acc += padded(t + j, dd) * p.W_emb(j * d.D + dd, f);
        }
      }
      z(t, f) = std::max(acc, 0.0);
    }
  }
  return z;
}

}  // namespace

TEST_CASE("model dims validation") {
  CHECK_NOTHROW(validate(small_dims()));
  ModelDims bad = small_dims();
  bad.m = 3;  // F=4 not divisible
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = small_dims();
  bad.kernel = 2;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = small_dims();
  bad.K = 0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("embed_features with an identity kernel is plain ReLU") {
  ModelDims d = small_dims();
  d.D = 4;
  d.kernel = 1;
  ModelParams p = ModelParams::zeros(d);
  p.W_emb = Matrix::Identity(4, 4);
  Matrix x(3, 4);
  x << -1, 2, -3, 4, 0.5, -0.5, 1, -1, 0, 0, -2, 2;
  const Matrix got = embed_features(x, p, d);
  CHECK((got - relu(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embed_features of zeros with zero bias is zero") {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::random_init(d, 3);
  p.b_emb.setZero();
  const Matrix x = Matrix::Zero(5, d.D);
  CHECK(embed_features(x, p, d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embed_features matches the sliding-window oracle") {
  const ModelDims d = small_dims();
  Rng rng(21);
  for (int it = 0; it < 10; ++it) {
    ModelParams p = ModelParams::random_init(d, 100 + it);
    for (Index i = 0; i < p.b_emb.size(); ++i) p.b_emb(i) = rng.uniform(-0.3, 0.3);
    const Matrix x = random_matrix(6, d.D, rng);
    const Matrix got = embed_features(x, p, d);
    CHECK((got - conv_oracle(x, p, d)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("embed_features rejects wrong widths") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 4);
  Rng rng(22);
  CHECK_THROWS_AS(embed_features(random_matrix(4, d.D + 1, rng), p, d), ValidationError);
}

TEST_CASE("encode_memory zero and identity compositions") {
  ModelDims d = small_dims();
  ModelParams p = ModelParams::zeros(d);
  const MemoryEncoding zero = encode_memory(p, d);
  CHECK(zero.K_M.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.V_M.cwiseAbs().maxCoeff() == 0.0);

  // Identity-padded two-layer map reproduces nonnegative M in the leading
  // value coordinates.
  d.F = 2;
  d.m = 1;
  d.r = 3;
  d.C = 2;
  p = ModelParams::zeros(d);
  p.M << 0.5, 1.0, 0.0, 2.0, 1.5, 0.25;
  p.W_V1(0, 0) = 1;
  p.W_V1(1, 1) = 1;
  p.W_V2(0, 0) = 1;
  p.W_V2(1, 1) = 1;
  const MemoryEncoding enc = encode_memory(p, d);
  for (Index k = 0; k < d.K; ++k) {
    CHECK(enc.V_M(k, 0) == p.M(k, 0));
    CHECK(enc.V_M(k, 1) == p.M(k, 1));
  }
}

TEST_CASE("encode_memory matches the two-step affine oracle") {
  const ModelDims d = small_dims();
  for (int it = 0; it < 5; ++it) {
    const ModelParams p = ModelParams::random_init(d, 200 + it);
    const MemoryEncoding enc = encode_memory(p, d);
    Matrix want_k(d.K, d.key_dim());
    for (Index i = 0; i < d.K; ++i) {
      for (Index j = 0; j < d.key_dim(); ++j) {
        Real acc = p.b_K(j);
        for (Index f = 0; f < d.F; ++f) acc += p.M(i, f) * p.W_K(f, j);
        want_k(i, j) = acc;
      }
    }
    CHECK((enc.K_M - want_k).cwiseAbs().maxCoeff() < 1e-12);

    Matrix hidden(d.K, d.r);
    for (Index i = 0; i < d.K; ++i) {
      for (Index j = 0; j < d.r; ++j) {
        Real acc = p.b_V1(j);
        for (Index f = 0; f < d.F; ++f) acc += p.M(i, f) * p.W_V1(f, j);
        hidden(i, j) = std::max(acc, 0.0);
      }
    }
    Matrix want_v(d.K, d.value_dim());
    for (Index i = 0; i < d.K; ++i) {
      for (Index j = 0; j < d.value_dim(); ++j) {
        Real acc = p.b_V2(j);
        for (Index h = 0; h < d.r; ++h) acc += hidden(i, h) * p.W_V2(h, j);
        want_v(i, j) = acc;
      }
    }
    CHECK((enc.V_M - want_v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("self_attention on a single segment doubles the feature") {
  Rng rng(23);
  const Matrix X_e = random_matrix(1, 4, rng);
  const Matrix Q = random_matrix(1, 2, rng);
  const auto [X_s, A] = self_attention(X_e, Q);
  CHECK(A(0, 0) == 1.0);
  CHECK((X_s - 2.0 * X_e).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("self_attention with identical queries mixes uniformly") {
  Rng rng(24);
  const Matrix X_e = random_matrix(2, 4, rng);
  Matrix Q(2, 2);
  Q << 0.3, -0.7, 0.3, -0.7;
  const auto [X_s, A] = self_attention(X_e, Q);
  CHECK(A(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(A(1, 0) == doctest::Approx(0.5).epsilon(1e-14));
  const Matrix mean = 0.5 * (X_e.row(0) + X_e.row(1));
  for (Index t = 0; t < 2; ++t) {
    CHECK((X_s.row(t) - (X_e.row(t) + mean)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("self_attention matches the direct formula") {
  Rng rng(25);
  const Matrix X_e = random_matrix(4, 4, rng);
  const Matrix Q = random_matrix(4, 2, rng);
  const auto [X_s, A] = self_attention(X_e, Q);

  const Real scale = std::sqrt(2.0);
  Matrix want_A(4, 4);
  for (Index i = 0; i < 4; ++i) {
    Real denom = 0;
    for (Index j = 0; j < 4; ++j) denom += std::exp(Q.row(i).dot(Q.row(j)) / scale);
    for (Index j = 0; j < 4; ++j) {
      want_A(i, j) = std::exp(Q.row(i).dot(Q.row(j)) / scale) / denom;
    }
  }
  CHECK((A - want_A).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix want_Xs = want_A * X_e + X_e;
  CHECK((X_s - want_Xs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross_similarity zero queries and aligned keys") {
  const Matrix zero_q = Matrix::Zero(3, 2);
  Rng rng(26);
  const Matrix keys = random_matrix(4, 2, rng);
  const Matrix s = cross_similarity(zero_q, keys);
  CHECK((s.array() - 0.5).abs().maxCoeff() < 1e-15);

  Matrix q(1, 2);
  q << 2, 0;
  Matrix k(2, 2);
  k << 3, 0, 0, 5;  // first aligned, second orthogonal
  const Matrix s2 = cross_similarity(q, k);
  CHECK(s2(0, 0) > 0.5);
  CHECK(s2(0, 1) == 0.5);
}

TEST_CASE("cross_similarity matches the scaled sigmoid formula") {
  Rng rng(27);
  const Matrix q = random_matrix(5, 2, rng);
  const Matrix k = random_matrix(3, 2, rng);
  const Matrix s = cross_similarity(q, k);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const Real z = q.row(i).dot(k.row(j)) / std::sqrt(2.0);
      CHECK(std::abs(s(i, j) - 1.0 / (1.0 + std::exp(-z))) < 1e-12);
      CHECK(s(i, j) > 0.0);
      CHECK(s(i, j) < 1.0);
    }
  }
}

TEST_CASE("read_values selection and reshape round trip") {
  const Index K = 3, C = 2, F = 4;
  Rng rng(28);
  const Matrix V_M = random_matrix(K, C * F, rng);

  Matrix one_hot = Matrix::Zero(2, K);
  one_hot(0, 1) = 1;
  one_hot(1, 2) = 1;
  const Matrix V_O = read_values(one_hot, V_M);
  CHECK((V_O.row(0) - V_M.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((V_O.row(1) - V_M.row(2)).cwiseAbs().maxCoeff() == 0.0);

  CHECK(read_values(Matrix::Zero(2, K), V_M).cwiseAbs().maxCoeff() == 0.0);

  // Fixed convention: entry (f, c) of the classifier is V_O(t, c*F + f);
  // flattening the classifier recovers the row exactly.
  for (Index t = 0; t < V_O.rows(); ++t) {
    const Matrix w = segment_classifier(V_O, t, F, C);
    for (Index f = 0; f < F; ++f) {
      for (Index c = 0; c < C; ++c) {
        CHECK(w(f, c) == V_O(t, c * F + f));
      }
    }
  }
}

TEST_CASE("foreground_attention is the per-row max") {
  Matrix s_const = Matrix::Constant(4, 3, 0.5);
  CHECK((foreground_attention(s_const).array() - 0.5).abs().maxCoeff() == 0.0);

  Matrix s(1, 3);
  s << 0.1, 0.9, 0.4;
  CHECK(foreground_attention(s)(0) == 0.9);

  Rng rng(29);
  Matrix sr(6, 4);
  for (Index i = 0; i < sr.size(); ++i) sr.data()[i] = rng.uniform();
  const Vector a = foreground_attention(sr);
  for (Index t = 0; t < sr.rows(); ++t) {
    Real best = sr(t, 0);
    for (Index k = 1; k < sr.cols(); ++k) best = std::max(best, sr(t, k));
    CHECK(a(t) == best);
  }
}

TEST_CASE("video_prediction degenerate cases and composed oracle") {
  const Index l = 5, F = 4, C = 3;
  Rng rng(30);

  // Equal logits across classes: uniform prediction.
  {
    Matrix X_s = Matrix::Ones(l, F);
    Matrix V_O(l, C * F);
    for (Index t = 0; t < l; ++t) {
      for (Index c = 0; c < C; ++c) {
        for (Index f = 0; f < F; ++f) V_O(t, c * F + f) = 0.25;
      }
    }
    Vector a = Vector::Constant(l, 0.7);
    const Prediction pred = video_prediction(X_s, V_O, a, C);
    for (Index c = 0; c < C; ++c) {
      CHECK(pred.y_hat(c) == doctest::Approx(1.0 / C).epsilon(1e-14));
    }
  }

  // Zero attention: pooled logits vanish, uniform prediction.
  {
    const Matrix X_s = random_matrix(l, F, rng);
    const Matrix V_O = random_matrix(l, C * F, rng);
    const Prediction pred = video_prediction(X_s, V_O, Vector::Zero(l), C);
    for (Index c = 0; c < C; ++c) {
      CHECK(pred.y_hat(c) == doctest::Approx(1.0 / C).epsilon(1e-14));
    }
  }

  // Random instance against scalar loops.
  {
    const Matrix X_s = random_matrix(l, F, rng);
    const Matrix V_O = random_matrix(l, C * F, rng);
    Vector a(l);
    for (Index t = 0; t < l; ++t) a(t) = rng.uniform();
    const Prediction pred = video_prediction(X_s, V_O, a, C);

    Matrix want_cseg(l, C);
    for (Index t = 0; t < l; ++t) {
      for (Index c = 0; c < C; ++c) {
        Real acc = 0;
        for (Index f = 0; f < F; ++f) acc += X_s(t, f) * V_O(t, c * F + f);
        want_cseg(t, c) = acc;
      }
    }
    Vector pooled = Vector::Zero(C);
    for (Index t = 0; t < l; ++t) pooled += a(t) * want_cseg.row(t).transpose();
    pooled /= static_cast<Real>(l);
    Real denom = 0;
    for (Index c = 0; c < C; ++c) denom += std::exp(pooled(c) - pooled.maxCoeff());
    CHECK((pred.C_seg - want_cseg).cwiseAbs().maxCoeff() < 1e-10);
    for (Index c = 0; c < C; ++c) {
      const Real want = std::exp(pooled(c) - pooled.maxCoeff()) / denom;
      CHECK(std::abs(pred.y_hat(c) - want) < 1e-10);
    }
    CHECK(std::abs(pred.y_hat.sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("forward bypasses self-attention exactly when disabled") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 55);
  Rng rng(31);
  const Matrix x = random_matrix(6, d.D, rng);
  const ForwardTrace off = forward(x, p, d, false);
  CHECK(off.A_self.size() == 0);
  CHECK((off.X_s - off.X_e).cwiseAbs().maxCoeff() == 0.0);

  const ForwardTrace on = forward(x, p, d, true);
  CHECK(on.A_self.rows() == x.rows());
}

TEST_CASE("forward is deterministic") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 56);
  Rng rng(32);
  const Matrix x = random_matrix(5, d.D, rng);
  const ForwardTrace t1 = forward(x, p, d, true);
  const ForwardTrace t2 = forward(x, p, d, true);
  CHECK((t1.y_hat - t2.y_hat).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.S - t2.S).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.X_s - t2.X_s).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward equals the composition of the individual operations") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 57);
  Rng rng(33);
  const Matrix x = random_matrix(6, d.D, rng);
  const ForwardTrace t = forward(x, p, d, true);

  const Matrix X_e = embed_features(x, p, d);
  const MemoryEncoding enc = encode_memory(p, d);
  Matrix Q = X_e * p.W_Q;
  Q.rowwise() += p.b_Q.transpose();
  const auto [X_s, A] = self_attention(X_e, Q);
  const Matrix S = cross_similarity(Q, enc.K_M);
  const Matrix V_O = read_values(S, enc.V_M);
  const Vector a = foreground_attention(S);
  const Prediction pred = video_prediction(X_s, V_O, a, d.C);

  CHECK((t.X_e - X_e).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.S - S).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.a - a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.y_hat - pred.y_hat).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("trace invariants hold on random instances") {
  const ModelDims d = small_dims();
  Rng rng(34);
  for (int it = 0; it < 10; ++it) {
    const ModelParams p = ModelParams::random_init(d, 300 + it);
    const Matrix x = random_matrix(7, d.D, rng);
    const ForwardTrace t = forward(x, p, d, true);

    for (Index i = 0; i < t.A_self.rows(); ++i) {
      CHECK(std::abs(t.A_self.row(i).sum() - 1.0) < 1e-12);
    }
    for (Index i = 0; i < t.S.size(); ++i) {
      CHECK(t.S.data()[i] > 0.0);
      CHECK(t.S.data()[i] < 1.0);
    }
    for (Index ti = 0; ti < t.S.rows(); ++ti) {
      CHECK(t.a(ti) == t.S.row(ti).maxCoeff());
    }
    CHECK(std::abs(t.y_hat.sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("the model is template-order equivariant") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 58);
  Rng rng(35);
  const Matrix x = random_matrix(6, d.D, rng);
  const ForwardTrace base = forward(x, p, d, true);

  std::vector<Index> perm(static_cast<std::size_t>(d.K));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::rotate(perm.begin(), perm.begin() + 1, perm.end());

  ModelParams permuted = p;
  for (Index k = 0; k < d.K; ++k) {
    permuted.M.row(k) = p.M.row(perm[static_cast<std::size_t>(k)]);
  }
  const ForwardTrace got = forward(x, permuted, d, true);
  CHECK((got.a - base.a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((got.y_hat - base.y_hat).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((got.C_seg - base.C_seg).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scaling one template leaves the other similarity columns alone") {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::random_init(d, 59);
  Rng rng(36);
  const Matrix x = random_matrix(5, d.D, rng);
  const ForwardTrace base = forward(x, p, d, true);

  ModelParams scaled = p;
  scaled.M.row(1) *= 3.0;
  const ForwardTrace got = forward(x, scaled, d, true);
  for (Index k = 0; k < d.K; ++k) {
    if (k == 1) continue;
    CHECK((got.S.col(k) - base.S.col(k)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("shape checks reject inconsistent parameters") {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::random_init(d, 60);
  CHECK_NOTHROW(check_shapes(p, d));
  p.M.resize(d.K + 1, d.F);
  CHECK_THROWS_AS(check_shapes(p, d), ValidationError);
}
