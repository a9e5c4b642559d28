#pragma once

#include <cstddef>

#include "pesl/random.hpp"
#include "pesl/tensor.hpp"

namespace pesl::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

inline Vector random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Naive triple loop, same accumulation order as the library kernel.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace pesl::testing
