#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pointdps/core.hpp"
#include "pointdps/random.hpp"

namespace pointdps {

/// Row-major dense cost matrix view, rows ≤ cols.
struct CostView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Optimal injective row→column matching.
struct Assignment {
  std::vector<std::size_t> row_to_col;  // one entry per row
  double cost = 0.0;                    // summed in row order
};

/// Exact linear assignment for an L×N cost matrix with L ≤ N.
///
/// Shortest augmenting path with dual potentials (Jonker-Volgenant style),
/// O(L·N²). Rectangular inputs are handled natively: every row is matched,
/// N−L columns stay free. Among equal-cost augmenting paths the lowest
/// column index wins, so results are reproducible bit for bit.
Assignment solve_lap(const CostView& cost);
Assignment solve_lap(const Matrix& cost);

/// Fills `out` (L×N row-major) with squared Euclidean distances between
/// the rows of `a` (L points) and `b` (N points).
void squared_distance_costs(const Matrix& a, const Matrix& b, std::vector<double>& out);
void distance_costs(const Matrix& a, const Matrix& b, std::vector<double>& out);

/// Index list realizing the 0/1 upsampling operator U ∈ {0,1}^{N×M}.
struct Upsampler {
  std::vector<std::size_t> indices;  // length N, entries in [0, M)
  std::size_t source_size = 0;       // M
};

/// N ≥ M: a random permutation of all M sources fills the first M slots and
/// the remaining N−M are drawn with replacement. N < M: N distinct sources.
Upsampler make_upsampler(std::size_t m, std::size_t n, RandomSource& rng);

/// output_i = y[indices[i]]. Throws Error if |y| ≠ M.
PointCloud apply_upsampler(const Upsampler& u, const PointCloud& y);
Matrix apply_upsampler(const Upsampler& u, const Matrix& y);

}  // namespace pointdps
