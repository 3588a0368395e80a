#pragma once

#include "aumn/rng.hpp"
#include "aumn/types.hpp"

// Shared generators for randomized tests. Oracles stay local to each test
// file so they remain independent of the code they check.

namespace aumn::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, Real scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Vector random_vector(Index n, Rng& rng, Real scale = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

// A random distribution over n entries (positive, sums to 1).
inline Vector random_distribution(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = -std::log(1.0 - rng.uniform());
  return v / v.sum();
}

}  // namespace aumn::testing
