#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pointdps/core.hpp"
#include "support.hpp"

using namespace pointdps;

TEST_CASE("random source streams") {
  RandomSource a(42, 7), b(42, 7), c(42, 8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b(), z = c();
    CHECK(x == y);
    differs |= x != z;
  }
  CHECK(differs);

  const RandomSource parent(3, 0);
  RandomSource s1 = parent.split(1), s1b = parent.split(1), s2 = parent.split(2);
  CHECK(s1() == s1b());
  CHECK(s1() != s2());

  RandomSource u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.index(5) < 5);
  }
}

TEST_CASE("random_orthogonal") {
  RandomSource rng(11);
  for (int i = 0; i < 200; ++i) {
    const Rotation r = random_orthogonal(rng, false);
    const Eigen::Matrix3d e = r.matrix().transpose() * r.matrix() - Eigen::Matrix3d::Identity();
    CHECK(e.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(std::abs(r.det()) - 1.0) < 1e-9);
    const Rotation p = random_orthogonal(rng, true);
    CHECK(std::abs(p.det() - 1.0) < 1e-9);
    CHECK(p.proper());
  }

  SUBCASE("improper fraction is one half") {
    RandomSource r2(12);
    int negative = 0;
    for (int i = 0; i < 10000; ++i) negative += random_orthogonal(r2, false).det() < 0.0 ? 1 : 0;
    CHECK(negative / 10000.0 >= 0.47);
    CHECK(negative / 10000.0 <= 0.53);
  }

  SUBCASE("deterministic") {
    RandomSource x(5), y(5);
    CHECK(random_orthogonal(x, false).matrix() == random_orthogonal(y, false).matrix());
  }

  CHECK_THROWS_AS(Rotation(Eigen::Matrix3d::Identity() * 2.0), Error);
}

TEST_CASE("center_and_scale") {
  Matrix a(2, 3);
  a << 0, 0, 0, 2, 0, 0;
  const PointCloud ca = center_and_scale(PointCloud(a));
  Matrix ea(2, 3);
  ea << -1, 0, 0, 1, 0, 0;
  CHECK((ca.coords() - ea).cwiseAbs().maxCoeff() < 1e-15);

  Matrix b(2, 3);
  b << 0, 0, 0, 4, 2, 0;
  const PointCloud cb = center_and_scale(PointCloud(b));
  CHECK(cb.centroid().norm() < 1e-15);
  CHECK(cb.coords().cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
  const double xext = cb.coords().col(0).maxCoeff() - cb.coords().col(0).minCoeff();
  const double yext = cb.coords().col(1).maxCoeff() - cb.coords().col(1).minCoeff();
  CHECK(xext / yext == doctest::Approx(2.0));

  Matrix d = Matrix::Ones(3, 3);
  CHECK_THROWS_WITH_AS(center_and_scale(PointCloud(d)), doctest::Contains("zero extent"), Error);

  RandomSource rng(2);
  const PointCloud r(testing::random_matrix(50, 3, rng, 3.0));
  const PointCloud once = center_and_scale(r);
  const PointCloud twice = center_and_scale(once);
  CHECK((once.coords() - twice.coords()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project") {
  Matrix p(1, 3);
  p << 1, 2, 3;
  const PointCloud out = project(PointCloud(p), Rotation::identity());
  CHECK(out.dim() == 2);
  CHECK(out.point(0)(0) == 1.0);
  CHECK(out.point(0)(1) == 2.0);

  // 90° about x; as a row vector (0,0,1)·R picks the last row of R.
  const double h = std::numbers::pi / 2;
  Eigen::Matrix3d rx;
  rx << 1, 0, 0, 0, std::cos(h), -std::sin(h), 0, std::sin(h), std::cos(h);
  Matrix z(1, 3);
  z << 0, 0, 1;
  const PointCloud pz = project(PointCloud(z), Rotation(rx));
  CHECK(pz.point(0)(0) == doctest::Approx(0.0));
  CHECK(pz.point(0)(1) == doctest::Approx(1.0));

  RandomSource rng(4);
  const PointCloud c(testing::random_matrix(17, 3, rng));
  const PointCloud dropped = project(c, Rotation::identity());
  CHECK(dropped.size() == 17);
  CHECK(dropped.coords() == Matrix(c.coords().leftCols(2)));
  const Rotation r = random_orthogonal(rng, false);
  CHECK(project(c, r).size() == c.size());
  CHECK((project(c, r).coords() - rotate(c, r).coords().leftCols(2)).norm() < 1e-14);
}

TEST_CASE("point cloud validation") {
  Matrix bad(1, 4);
  bad.setZero();
  CHECK_THROWS_AS(PointCloud{bad}, Error);
  Matrix nan(1, 3);
  nan << 0, std::nan(""), 0;
  CHECK_THROWS_AS(PointCloud{nan}, Error);
}

TEST_CASE("xyz round trip") {
  RandomSource rng(8);
  const PointCloud c(testing::random_matrix(9, 3, rng));
  const auto dir = std::filesystem::temp_directory_path() / "pointdps_test_core";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.xyz";
  write_xyz(path, c);
  CHECK(read_xyz(path) == c);

  std::istringstream two("1 2\n3 4\r\n\n");
  const PointCloud p = parse_xyz(two);
  CHECK(p.size() == 2);
  CHECK(p.dim() == 2);

  std::istringstream ragged("1 2 3\n4 5\n");
  CHECK_THROWS_AS(parse_xyz(ragged), Error);
  std::filesystem::remove_all(dir);
}
