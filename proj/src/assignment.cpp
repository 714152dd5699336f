#include "pointdps/assignment.hpp"

#include <limits>
#include <numeric>

namespace pointdps {

Assignment solve_lap(const CostView& cost) {
  const std::size_t rows = cost.rows;
  const std::size_t cols = cost.cols;
  if (rows > cols) throw Error("solve_lap: infeasible, more rows than columns");
  if (cost.data.size() != rows * cols) throw Error("solve_lap: cost buffer size mismatch");

  Assignment result;
  result.row_to_col.assign(rows, 0);
  if (rows == 0) return result;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  // Column slot `cols` is the virtual source column of each augmentation.
  std::vector<double> row_pot(rows, 0.0);
  std::vector<double> col_pot(cols + 1, 0.0);
  std::vector<std::size_t> col_owner(cols + 1, kNone);
  std::vector<std::size_t> prev_col(cols + 1, kNone);
  std::vector<double> dist(cols + 1);
  std::vector<char> done(cols + 1);

  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t source = cols;
    col_owner[source] = r;
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(done.begin(), done.end(), 0);

    std::size_t cur = source;
    while (col_owner[cur] != kNone) {
      done[cur] = 1;
      const std::size_t i = col_owner[cur];
      double delta = kInf;
      std::size_t next = kNone;
      for (std::size_t j = 0; j < cols; ++j) {
        if (done[j]) continue;
        const double reduced = cost(i, j) - row_pot[i] - col_pot[j];
        if (reduced < dist[j]) {
          dist[j] = reduced;
          prev_col[j] = cur;
        }
        if (dist[j] < delta) {
          delta = dist[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (done[j]) {
          row_pot[col_owner[j]] += delta;
          col_pot[j] -= delta;
        } else {
          dist[j] -= delta;
        }
      }
      cur = next;
    }
    // Augment along the alternating path back to the source.
    while (cur != source) {
      const std::size_t p = prev_col[cur];
      col_owner[cur] = col_owner[p];
      cur = p;
    }
    col_owner[source] = kNone;
  }

  for (std::size_t j = 0; j < cols; ++j) {
    if (col_owner[j] != kNone) result.row_to_col[col_owner[j]] = j;
  }
  for (std::size_t i = 0; i < rows; ++i) result.cost += cost(i, result.row_to_col[i]);
  return result;
}

Assignment solve_lap(const Matrix& cost) {
  return solve_lap(CostView{std::span<const double>(cost.data(), static_cast<std::size_t>(cost.size())),
                            static_cast<std::size_t>(cost.rows()), static_cast<std::size_t>(cost.cols())});
}

void squared_distance_costs(const Matrix& a, const Matrix& b, std::vector<double>& out) {
  const Eigen::Index l = a.rows();
  const Eigen::Index n = b.rows();
  const Eigen::Index d = a.cols();
  out.resize(static_cast<std::size_t>(l * n));
  for (Eigen::Index i = 0; i < l; ++i) {
    double* row = out.data() + i * n;
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      row[j] = s;
    }
  }
}

void distance_costs(const Matrix& a, const Matrix& b, std::vector<double>& out) {
  squared_distance_costs(a, b, out);
  for (double& v : out) v = std::sqrt(v);
}

Upsampler make_upsampler(std::size_t m, std::size_t n, RandomSource& rng) {
  if (m == 0 || n == 0) throw Error("make_upsampler: sizes must be positive");
  Upsampler u;
  u.source_size = m;
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Partial Fisher-Yates over the first min(m, n) slots.
  const std::size_t k = std::min(m, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(m - i);
    std::swap(perm[i], perm[j]);
  }
  u.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = k; i < n; ++i) u.indices.push_back(rng.index(m));
  return u;
}

Matrix apply_upsampler(const Upsampler& u, const Matrix& y) {
  if (static_cast<std::size_t>(y.rows()) != u.source_size) {
    throw Error("apply_upsampler: observation has " + std::to_string(y.rows()) + " points, upsampler expects " +
                std::to_string(u.source_size));
  }
  Matrix out(static_cast<Eigen::Index>(u.indices.size()), y.cols());
  for (std::size_t i = 0; i < u.indices.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(u.indices[i]));
  }
  return out;
}

PointCloud apply_upsampler(const Upsampler& u, const PointCloud& y) {
  return PointCloud(apply_upsampler(u, y.coords()));
}

}  // namespace pointdps
