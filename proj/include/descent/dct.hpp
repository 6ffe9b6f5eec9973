#pragma once

// Discrete cosine transform bases.
//
// dct_matrix(m, n_atoms) returns an m x n_atoms matrix whose columns are
// L2-normalized cosine atoms a_k[i] = cos(pi * (2i+1) * k / (2 * n_atoms)).
// With n_atoms == m this is exactly the orthonormal DCT-II basis; with
// n_atoms > m it is the usual overcomplete (oversampled-frequency) DCT frame.

#include <cmath>
#include <vector>

#include "descent/errors.hpp"

namespace descent {

// Row-major m x n matrix of raw doubles (no autodiff involvement).
inline std::vector<double> dct_matrix(int m, int n_atoms) {
  if (m <= 0 || n_atoms <= 0) throw ParamError("dct_matrix: dimensions must be positive");
  std::vector<double> d(static_cast<size_t>(m) * n_atoms);
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < n_atoms; ++k) {
    double norm_sq = 0.0;
    for (int i = 0; i < m; ++i) {
      double v = std::cos(pi * (2.0 * i + 1.0) * k / (2.0 * n_atoms));
      d[static_cast<size_t>(i) * n_atoms + k] = v;
      norm_sq += v * v;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (int i = 0; i < m; ++i) d[static_cast<size_t>(i) * n_atoms + k] *= inv;
  }
  return d;
}

}  // namespace descent
