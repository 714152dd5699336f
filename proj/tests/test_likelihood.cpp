#include <doctest.h>

#include <filesystem>

#include "pointdps/likelihood.hpp"
#include "support.hpp"

using namespace pointdps;

namespace {

Observation make_projection(const Matrix& pts2d, const Rotation& r) {
  Observation o;
  o.kind = ObservationKind::projection;
  o.points = PointCloud(pts2d);
  o.rotation = r;
  return o;
}

Observation make_3d(ObservationKind kind, const Matrix& pts) {
  Observation o;
  o.kind = kind;
  o.points = PointCloud(pts);
  return o;
}

Matrix squared_costs(const Matrix& a, const Matrix& b) {
  std::vector<double> c;
  squared_distance_costs(a, b, c);
  return Eigen::Map<Matrix>(c.data(), a.rows(), b.rows());
}

void shuffle_rows(Matrix& m, RandomSource& rng) {
  for (Eigen::Index i = m.rows() - 1; i > 0; --i) m.row(i).swap(m.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(i) + 1))));
}

}  // namespace

TEST_CASE("projection energy") {
  RandomSource rng(41);
  const Matrix x = testing::random_matrix(5, 3, rng);

  ObservationSet self;
  self.observations.push_back(make_projection(x.leftCols(2), Rotation::identity()));
  self.bind(5);
  CHECK(projection_energy(x, self.observations[0]).energy < 1e-12);

  // Shift along the projection axis.
  Matrix shifted = x;
  shifted.col(2).array() += 3.7;
  CHECK(projection_energy(shifted, self.observations[0]).energy < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x3 = testing::random_matrix(3, 3, rng);
    const Rotation r = random_orthogonal(rng, false);
    ObservationSet s;
    s.observations.push_back(make_projection(testing::random_matrix(3, 2, rng), r));
    s.bind(3);
    const Observation& o = s.observations[0];
    const Matrix costs = squared_costs(o.points.coords(), x3 * r.matrix().leftCols<2>());
    CHECK(projection_energy(x3, o).energy == doctest::Approx(testing::brute_force_lap(costs)).epsilon(1e-9));
  }

  Observation unbound = make_projection(x.leftCols(2), Rotation::identity());
  CHECK_THROWS_AS(projection_energy(x, unbound), Error);
  ObservationSet wrong;
  wrong.observations.push_back(unbound);
  wrong.bind(4);
  CHECK_THROWS_AS(projection_energy(x, wrong.observations[0]), Error);
}

TEST_CASE("coarse energy") {
  RandomSource rng(42);
  const Matrix x = testing::random_matrix(6, 3, rng);
  ObservationSet self;
  self.observations.push_back(make_3d(ObservationKind::coarse, x));
  self.bind(6);
  CHECK(coarse_energy(x, self.observations[0]).energy < 1e-12);

  ObservationSet origin;
  origin.observations.push_back(make_3d(ObservationKind::coarse, Matrix::Zero(1, 3)));
  origin.bind(2);
  Matrix two(2, 3);
  two << 1, 0, 0, -1, 0, 0;
  CHECK(coarse_energy(two, origin.observations[0]).energy == doctest::Approx(2.0));

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x4 = testing::random_matrix(4, 3, rng);
    ObservationSet s;
    s.observations.push_back(make_3d(ObservationKind::coarse, testing::random_matrix(2, 3, rng)));
    s.observations.back().upsample_seed = static_cast<std::uint64_t>(trial);
    s.bind(4);
    const Observation& o = s.observations[0];
    const Matrix up = apply_upsampler(*o.upsampler, o.points.coords());
    const EnergyResult e = coarse_energy(x4, o);
    CHECK(e.energy == doctest::Approx(testing::brute_force_lap(squared_costs(up, x4))).epsilon(1e-9));
    // Energy equals the residual under the stored assignment.
    double resid = 0.0;
    for (std::size_t i = 0; i < 4; ++i) resid += (up.row(static_cast<Eigen::Index>(i)) - x4.row(static_cast<Eigen::Index>(e.assignment.row_to_col[i]))).squaredNorm();
    CHECK(e.energy == doctest::Approx(resid).epsilon(1e-9));
  }
}

TEST_CASE("subunit energy") {
  Matrix x(2, 3);
  x << 3, 4, 0, 1, 0, 0;
  const Observation one = make_3d(ObservationKind::subunit, Matrix::Zero(1, 3));
  CHECK(subunit_energy(x, one).energy == doctest::Approx(1.0));

  RandomSource rng(43);
  const Matrix big = testing::random_matrix(7, 3, rng);
  CHECK(subunit_energy(big, make_3d(ObservationKind::subunit, big.topRows(3))).energy == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x4 = testing::random_matrix(4, 3, rng);
    const Matrix y = testing::random_matrix(2, 3, rng);
    CHECK(subunit_energy(x4, make_3d(ObservationKind::subunit, y)).energy ==
          doctest::Approx(testing::brute_force_lap(squared_costs(y, x4))).epsilon(1e-9));
  }
  CHECK_THROWS_AS(subunit_energy(x, make_3d(ObservationKind::subunit, big)), Error);
}

TEST_CASE("combined energy") {
  RandomSource rng(44);
  const Matrix x = testing::random_matrix(16, 3, rng);
  ObservationSet empty;
  const CombinedEnergy e0 = combined_energy(x, empty);
  CHECK(e0.energy == 0.0);
  CHECK(e0.gradient.isZero());

  ObservationSet single;
  single.observations.push_back(make_3d(ObservationKind::subunit, testing::random_matrix(4, 3, rng)));
  single.observations.back().weight = 1.0;
  CHECK(combined_energy(x, single).energy == subunit_energy(x, single.observations[0]).energy);

  // Several projections: additive with default weights 1/|obs|.
  ObservationSet multi;
  for (int k = 0; k < 3; ++k) multi.observations.push_back(make_projection(testing::random_matrix(10, 2, rng), random_orthogonal(rng, false)));
  multi.bind(16);
  double sum = 0.0;
  for (const auto& o : multi.observations) sum += projection_energy(x, o).energy;
  CHECK(combined_energy(x, multi).energy == doctest::Approx(sum / 3.0).epsilon(1e-12));
}

TEST_CASE("energies are invariant to row order of x") {
  RandomSource rng(45);
  ObservationSet s;
  s.observations.push_back(make_projection(testing::random_matrix(12, 2, rng), random_orthogonal(rng, false)));
  s.observations.push_back(make_3d(ObservationKind::coarse, testing::random_matrix(5, 3, rng)));
  s.observations.push_back(make_3d(ObservationKind::subunit, testing::random_matrix(4, 3, rng)));
  s.bind(12);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = testing::random_matrix(12, 3, rng);
    const CombinedEnergy a = combined_energy(x, s);
    shuffle_rows(x, rng);
    const CombinedEnergy b = combined_energy(x, s);
    CHECK(a.energy == doctest::Approx(b.energy).epsilon(1e-9));
    CHECK(a.energy >= 0.0);
  }
}

TEST_CASE("gradients match finite differences") {
  RandomSource rng(46);
  ObservationSet s;
  s.observations.push_back(make_projection(testing::random_matrix(16, 2, rng), random_orthogonal(rng, false)));
  s.observations.push_back(make_3d(ObservationKind::coarse, testing::random_matrix(6, 3, rng)));
  s.observations.push_back(make_3d(ObservationKind::subunit, testing::random_matrix(5, 3, rng)));
  s.bind(16);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = testing::random_matrix(16, 3, rng);
    for (const auto& o : s.observations) {
      const EnergyResult e = observation_energy(x, o);
      const Matrix num = testing::numeric_gradient([&](const Matrix& z) { return observation_energy(z, o).energy; }, x);
      CHECK(testing::rel_error(e.gradient, num) < 1e-5);
    }
    const CombinedEnergy c = combined_energy(x, s);
    const Matrix num = testing::numeric_gradient([&](const Matrix& z) { return combined_energy(z, s).energy; }, x);
    CHECK(testing::rel_error(c.gradient, num) < 1e-5);
  }
}

TEST_CASE("upsampler is frozen by seed") {
  RandomSource rng(47);
  ObservationSet a, b;
  Observation o = make_3d(ObservationKind::coarse, testing::random_matrix(4, 3, rng));
  o.upsample_seed = 99;
  a.observations.push_back(o);
  b.observations.push_back(o);
  a.bind(10);
  b.bind(10);
  CHECK(a.observations[0].upsampler->indices == b.observations[0].upsampler->indices);
  const Matrix x = testing::random_matrix(10, 3, rng);
  CHECK(coarse_energy(x, a.observations[0]).energy == coarse_energy(x, a.observations[0]).energy);
}

TEST_CASE("validation") {
  Observation p;
  p.kind = ObservationKind::projection;
  p.points = PointCloud(Matrix(Matrix::Zero(3, 2)));
  CHECK_THROWS_AS(p.validate(), Error);  // no rotation
  Observation c;
  c.kind = ObservationKind::coarse;
  c.points = PointCloud(Matrix(Matrix::Zero(3, 2)));
  CHECK_THROWS_AS(c.validate(), Error);
  ObservationSet s;
  s.observations.push_back(make_3d(ObservationKind::subunit, Matrix::Zero(5, 3)));
  CHECK_THROWS_AS(s.bind(4), Error);
  CHECK_THROWS_AS(observation_kind_from_string("density"), Error);
}

TEST_CASE("json round trip") {
  RandomSource rng(48);
  ObservationSet s;
  s.observations.push_back(make_projection(testing::random_matrix(4, 2, rng), random_orthogonal(rng, false)));
  s.observations.back().upsample_seed = 123;
  s.observations.push_back(make_3d(ObservationKind::subunit, testing::random_matrix(2, 3, rng)));
  s.observations.back().weight = 0.25;
  const std::string text = observations_to_json(s);
  const ObservationSet r = observations_from_json(text);
  REQUIRE(r.size() == 2);
  CHECK(r.observations[0].kind == ObservationKind::projection);
  CHECK(r.observations[0].points == s.observations[0].points);
  CHECK(r.observations[0].rotation->matrix() == s.observations[0].rotation->matrix());
  CHECK(*r.observations[0].upsample_seed == 123);
  CHECK(!r.observations[0].weight);
  CHECK(*r.observations[1].weight == 0.25);
  CHECK(observations_to_json(r) == text);
  CHECK_THROWS_AS(observations_from_json("{\"observations\": [{\"kind\": \"coarse\"}]}"), Error);
  CHECK_THROWS_AS(observations_from_json("not json"), Error);
}
