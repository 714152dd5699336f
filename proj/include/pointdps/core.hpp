#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "pointdps/random.hpp"

namespace pointdps {

/// Row-major N×D coordinate block; one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered set of 2D or 3D points.
///
/// Points are row vectors. Coordinates are unitless model coordinates unless
/// a caller says otherwise (PDB-derived clouds are in Å).
class PointCloud {
 public:
  PointCloud() = default;
  /// Throws Error if the dimension is not 2 or 3 or a coordinate is not finite.
  explicit PointCloud(Matrix coords);

  static PointCloud zeros(Eigen::Index n, Eigen::Index dim);

  Eigen::Index size() const { return coords_.rows(); }
  Eigen::Index dim() const { return coords_.cols(); }
  bool empty() const { return coords_.rows() == 0; }

  const Matrix& coords() const { return coords_; }
  auto point(Eigen::Index i) const { return coords_.row(i); }

  Eigen::RowVectorXd centroid() const;

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.coords_.rows() == b.coords_.rows() && a.coords_.cols() == b.coords_.cols() &&
           a.coords_ == b.coords_;
  }

 private:
  Matrix coords_ = Matrix(0, 3);
};

/// Orthogonal 3×3 matrix acting on row vectors as x·R.
class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}
  /// Throws Error unless RᵀR = I within 1e-9 per entry.
  explicit Rotation(const Eigen::Matrix3d& m);

  static Rotation identity() { return Rotation(); }

  const Eigen::Matrix3d& matrix() const { return m_; }
  double det() const { return m_.determinant(); }
  bool proper() const { return det() > 0.0; }

 private:
  Eigen::Matrix3d m_;
};

/// Haar-distributed element of O(3), or of SO(3) when `proper` is set.
Rotation random_orthogonal(RandomSource& rng, bool proper);

/// Centers the cloud and scales isotropically so max |coordinate| = 1.
PointCloud center_and_scale(const PointCloud& cloud);

/// First two columns of cloud·R.
PointCloud project(const PointCloud& cloud, const Rotation& r);

/// Applies x·R to every point of a 3D cloud.
PointCloud rotate(const PointCloud& cloud, const Rotation& r);

// "xyz" text format: one point per line, '#' comments, 2 or 3 columns.
PointCloud parse_xyz(std::istream& in);
PointCloud read_xyz(const std::filesystem::path& path);
void write_xyz(std::ostream& out, const PointCloud& cloud);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

/// Writes via a temporary file and rename, so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace pointdps
