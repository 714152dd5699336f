#include "pointdps/core.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace pointdps {

PointCloud::PointCloud(Matrix coords) : coords_(std::move(coords)) {
  if (coords_.cols() != 2 && coords_.cols() != 3) {
    throw Error("point cloud dimension must be 2 or 3, got " + std::to_string(coords_.cols()));
  }
  if (!coords_.allFinite()) throw Error("point cloud contains non-finite coordinates");
}

PointCloud PointCloud::zeros(Eigen::Index n, Eigen::Index dim) {
  return PointCloud(Matrix::Zero(n, dim));
}

Eigen::RowVectorXd PointCloud::centroid() const {
  if (empty()) return Eigen::RowVectorXd::Zero(dim());
  return coords_.colwise().mean();
}

Rotation::Rotation(const Eigen::Matrix3d& m) : m_(m) {
  const Eigen::Matrix3d gram = m_.transpose() * m_;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error("rotation matrix is not orthogonal");
  }
}

Rotation random_orthogonal(RandomSource& rng, bool proper) {
  Eigen::Matrix3d g;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g(i, j) = rng.normal();

  Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
  Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign-correct so that R has a positive diagonal; this makes Q Haar.
  for (int j = 0; j < 3; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  if (proper && q.determinant() < 0.0) q.col(0) = -q.col(0);
  return Rotation(q);
}

PointCloud center_and_scale(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("center_and_scale: empty cloud");
  if (cloud.dim() != 3) throw Error("center_and_scale: expected 3D cloud");
  Matrix c = cloud.coords().rowwise() - cloud.centroid();
  const double extent = c.cwiseAbs().maxCoeff();
  if (!(extent > 0.0)) throw Error("center_and_scale: zero extent");
  c /= extent;
  return PointCloud(std::move(c));
}

PointCloud project(const PointCloud& cloud, const Rotation& r) {
  if (cloud.dim() != 3) throw Error("project: expected 3D cloud");
  Matrix out = cloud.coords() * r.matrix().leftCols<2>();
  return PointCloud(std::move(out));
}

PointCloud rotate(const PointCloud& cloud, const Rotation& r) {
  if (cloud.dim() != 3) throw Error("rotate: expected 3D cloud");
  return PointCloud(Matrix(cloud.coords() * r.matrix()));
}

PointCloud parse_xyz(std::istream& in) {
  std::vector<double> values;
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Eigen::Index n = 0;
    double v;
    while (ls >> v) {
      values.push_back(v);
      ++n;
    }
    if (!ls.eof()) {
      throw Error("xyz: malformed number on line " + std::to_string(lineno));
    }
    if (cols < 0) cols = n;
    if (n != cols || (n != 2 && n != 3)) {
      throw Error("xyz: expected 2 or 3 uniform columns on line " + std::to_string(lineno));
    }
    ++rows;
  }
  if (cols < 0) cols = 3;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
  return PointCloud(std::move(m));
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_xyz(in);
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (Eigen::Index j = 0; j < cloud.dim(); ++j) {
      if (j) out << ' ';
      out << cloud.coords()(i, j);
    }
    out << '\n';
  }
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ostringstream os;
  write_xyz(os, cloud);
  write_file_atomic(path, os.str());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace pointdps
