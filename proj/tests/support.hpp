#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "pointdps/core.hpp"
#include "pointdps/random.hpp"

namespace testing {

using pointdps::Matrix;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, pointdps::RandomSource& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, pointdps::RandomSource& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

// Minimum of Σ_r cost(r, sel[r]) over all injective row→column selections.
inline double brute_force_lap(const Matrix& cost) {
  const auto rows = static_cast<std::size_t>(cost.rows());
  const auto cols = static_cast<std::size_t>(cost.cols());
  std::vector<std::size_t> perm(cols);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < rows; ++r) c += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r]));
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ‖a − b‖ / max(‖b‖, floor)
inline double rel_error(const Matrix& a, const Matrix& b, double floor = 1e-12) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

// Central differences of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = xp.data()[i];
    xp.data()[i] = v + h;
    const double fp = f(xp);
    xp.data()[i] = v - h;
    const double fm = f(xp);
    xp.data()[i] = v;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace testing
