#include "aumn/model.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "aumn/numerics.hpp"
#include "aumn/rng.hpp"

namespace aumn {

void validate(const ModelDims& d) {
  if (d.D < 1 || d.F < 1 || d.C < 1 || d.K < 1 || d.m < 1 || d.r < 1 || d.kernel < 1) {
    throw ValidationError("model dims: all counts must be >= 1");
  }
  if (d.F % d.m != 0) {
    throw ValidationError("model dims: F must be divisible by m");
  }
  if (d.kernel % 2 == 0) {
    throw ValidationError("model dims: kernel width must be odd");
  }
}

ModelParams ModelParams::zeros(const ModelDims& d) {
  ModelParams p;
  p.W_emb = Matrix::Zero(d.kernel * d.D, d.F);
  p.b_emb = Vector::Zero(d.F);
  p.M = Matrix::Zero(d.K, d.F);
  p.W_K = Matrix::Zero(d.F, d.key_dim());
  p.b_K = Vector::Zero(d.key_dim());
  p.W_V1 = Matrix::Zero(d.F, d.r);
  p.b_V1 = Vector::Zero(d.r);
  p.W_V2 = Matrix::Zero(d.r, d.value_dim());
  p.b_V2 = Vector::Zero(d.value_dim());
  p.W_Q = Matrix::Zero(d.F, d.key_dim());
  p.b_Q = Vector::Zero(d.key_dim());
  return p;
}

namespace {

void fill_uniform_fan_in(Matrix& w, Index fan_in, Rng& rng) {
  const Real s = 1.0 / std::sqrt(static_cast<Real>(fan_in));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) {
      w(i, j) = rng.uniform(-s, s);
    }
  }
}

}  // namespace

ModelParams ModelParams::random_init(const ModelDims& d, std::uint64_t seed) {
  validate(d);
  ModelParams p = zeros(d);
  Rng rng(seed);
  fill_uniform_fan_in(p.W_emb, d.kernel * d.D, rng);
  const Real m_std = 1.0 / std::sqrt(static_cast<Real>(d.F));
  for (Index i = 0; i < d.K; ++i) {
    for (Index j = 0; j < d.F; ++j) {
      p.M(i, j) = m_std * rng.normal();
    }
  }
  fill_uniform_fan_in(p.W_K, d.F, rng);
  fill_uniform_fan_in(p.W_V1, d.F, rng);
  fill_uniform_fan_in(p.W_V2, d.r, rng);
  fill_uniform_fan_in(p.W_Q, d.F, rng);
  return p;
}

void check_shapes(const ModelParams& p, const ModelDims& d) {
  auto expect = [](const char* name, Index got_r, Index got_c, Index want_r, Index want_c) {
    if (got_r != want_r || got_c != want_c) {
      throw ValidationError(std::string("parameter ") + name + " has shape " +
                            std::to_string(got_r) + "x" + std::to_string(got_c) + ", expected " +
                            std::to_string(want_r) + "x" + std::to_string(want_c));
    }
  };
  expect("W_emb", p.W_emb.rows(), p.W_emb.cols(), d.kernel * d.D, d.F);
  expect("b_emb", p.b_emb.size(), 1, d.F, 1);
  expect("M", p.M.rows(), p.M.cols(), d.K, d.F);
  expect("W_K", p.W_K.rows(), p.W_K.cols(), d.F, d.key_dim());
  expect("b_K", p.b_K.size(), 1, d.key_dim(), 1);
  expect("W_V1", p.W_V1.rows(), p.W_V1.cols(), d.F, d.r);
  expect("b_V1", p.b_V1.size(), 1, d.r, 1);
  expect("W_V2", p.W_V2.rows(), p.W_V2.cols(), d.r, d.value_dim());
  expect("b_V2", p.b_V2.size(), 1, d.value_dim(), 1);
  expect("W_Q", p.W_Q.rows(), p.W_Q.cols(), d.F, d.key_dim());
  expect("b_Q", p.b_Q.size(), 1, d.key_dim(), 1);
  p.for_each_tensor([](const char* name, const auto& t) {
    if (!t.allFinite()) {
      throw ValidationError(std::string("parameter ") + name + " contains non-finite entries");
    }
  });
}

Matrix embed_features(const Matrix& x, const ModelParams& p, const ModelDims& d) {
  if (x.cols() != d.D) {
    throw ValidationError("embed_features: input has " + std::to_string(x.cols()) +
                          " columns, expected D=" + std::to_string(d.D));
  }
  const Index l = x.rows();
  if (l < 1) {
    throw ValidationError("embed_features: need at least one segment");
  }
  const Index pad = d.kernel / 2;
  Matrix z(l, d.F);
  z.rowwise() = p.b_emb.transpose();
  for (Index j = 0; j < d.kernel; ++j) {
    const Index off = j - pad;
    const Index n = l - std::abs(off);
    if (n <= 0) continue;
    z.middleRows(std::max<Index>(0, -off), n).noalias() +=
        x.middleRows(std::max<Index>(0, off), n) * p.W_emb.middleRows(j * d.D, d.D);
  }
  return relu(z);
}

MemoryEncoding encode_memory(const ModelParams& p, const ModelDims&) {
  MemoryEncoding e;
  e.K_M = p.M * p.W_K;
  e.K_M.rowwise() += p.b_K.transpose();
  e.H = p.M * p.W_V1;
  e.H.rowwise() += p.b_V1.transpose();
  e.V_M = relu(e.H) * p.W_V2;
  e.V_M.rowwise() += p.b_V2.transpose();
  return e;
}

std::pair<Matrix, Matrix> self_attention(const Matrix& X_e, const Matrix& Q) {
  if (X_e.rows() != Q.rows()) {
    throw ValidationError("self_attention: X_e and Q must have equal row counts");
  }
  const Real scale = std::sqrt(static_cast<Real>(Q.cols()));
  Matrix A = softmax_rows((Q * Q.transpose()) / scale);
  Matrix X_s = A * X_e + X_e;
  return {std::move(X_s), std::move(A)};
}

Matrix cross_similarity(const Matrix& Q, const Matrix& K_M) {
  if (Q.cols() != K_M.cols()) {
    throw ValidationError("cross_similarity: query and key dims differ");
  }
  const Real scale = std::sqrt(static_cast<Real>(Q.cols()));
  return sigmoid((Q * K_M.transpose()) / scale);
}

Matrix read_values(const Matrix& S, const Matrix& V_M) {
  if (S.cols() != V_M.rows()) {
    throw ValidationError("read_values: S columns must match V_M rows");
  }
  return S * V_M;
}

Matrix segment_classifier(const Matrix& V_O, Index t, Index F, Index C) {
  // Row t holds the classifier column-major: entry (f, c) at index c*F + f.
  return Eigen::Map<const Eigen::MatrixXd>(V_O.data() + t * V_O.cols(), F, C);
}

Vector foreground_attention(const Matrix& S) {
  return S.rowwise().maxCoeff();
}

Prediction video_prediction(const Matrix& X_s, const Matrix& V_O, const Vector& a, Index C) {
  const Index l = X_s.rows();
  const Index F = X_s.cols();
  if (V_O.rows() != l || V_O.cols() != C * F || a.size() != l) {
    throw ValidationError("video_prediction: inconsistent shapes");
  }
  Prediction out;
  out.C_seg.resize(l, C);
  for (Index t = 0; t < l; ++t) {
    Eigen::Map<const Eigen::MatrixXd> w(V_O.data() + t * V_O.cols(), F, C);
    out.C_seg.row(t) = X_s.row(t) * w;
  }
  out.pooled = (out.C_seg.transpose() * a) / static_cast<Real>(l);
  out.y_hat = softmax(out.pooled);
  return out;
}

ForwardTrace forward(const Matrix& x, const ModelParams& p, const ModelDims& d,
                     bool use_self_attention) {
  ForwardTrace t;
  t.self_attention = use_self_attention;
  t.X_e = embed_features(x, p, d);
  MemoryEncoding enc = encode_memory(p, d);
  t.K_M = std::move(enc.K_M);
  t.V_M = std::move(enc.V_M);
  t.H_v = std::move(enc.H);
  t.Q = t.X_e * p.W_Q;
  t.Q.rowwise() += p.b_Q.transpose();
  if (use_self_attention) {
    auto [X_s, A] = self_attention(t.X_e, t.Q);
    t.X_s = std::move(X_s);
    t.A_self = std::move(A);
  } else {
    t.X_s = t.X_e;
  }
  t.S = cross_similarity(t.Q, t.K_M);
  t.V_O = read_values(t.S, t.V_M);
  t.a = foreground_attention(t.S);
  Prediction pred = video_prediction(t.X_s, t.V_O, t.a, d.C);
  t.C_seg = std::move(pred.C_seg);
  t.pooled = std::move(pred.pooled);
  t.y_hat = std::move(pred.y_hat);
  return t;
}

}  // namespace aumn
