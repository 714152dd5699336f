#include <doctest.h>

#include <set>
#include <string>

#include "pointdps/data.hpp"
#include "support.hpp"

using namespace pointdps;

namespace {

const std::string kAtomN = "ATOM      1  N   MET A   1      11.104  13.207   2.100  1.00 20.00           N";

std::string with_element(std::string line, const std::string& el) {
  line.replace(76, 2, el.size() == 1 ? " " + el : el);
  return line;
}

std::string with_columns(std::string line, std::size_t first, const std::string& text) {
  line.replace(first - 1, text.size(), text);
  return line;
}

}  // namespace

TEST_CASE("parse_pdb fixed columns") {
  const auto atoms = parse_pdb(kAtomN + "\n");
  REQUIRE(atoms.size() == 1);
  CHECK(atoms[0].element == "N");
  CHECK(atoms[0].position == Vec3(11.104, 13.207, 2.100));
  CHECK(atoms[0].kind == RecordKind::atom);

  CHECK_THROWS_WITH_AS(parse_pdb(with_element(kAtomN, "H") + "\n"), doctest::Contains("no heavy atoms"), Error);
  CHECK_THROWS_WITH_AS(parse_pdb(with_element(kAtomN, "D")), doctest::Contains("no heavy atoms"), Error);
  CHECK_THROWS_WITH_AS(parse_pdb(""), doctest::Contains("no heavy atoms"), Error);
}

TEST_CASE("parse_pdb record rules") {
  const std::string het = with_columns(with_columns(kAtomN, 1, "HETATM"), 18, "HEM");
  const std::string water = with_columns(with_columns(kAtomN, 1, "HETATM"), 18, "HOH");
  const std::string alt_b = with_columns(kAtomN, 17, "B");
  const std::string alt_a = with_columns(kAtomN, 17, "A");
  const std::string text = kAtomN + "\n" + het + "\n" + water + "\n" + alt_a + "\n" + alt_b + "\nTER\nENDMDL\n" + kAtomN + "\n";
  const auto atoms = parse_pdb(text);
  REQUIRE(atoms.size() == 3);
  CHECK(atoms[1].kind == RecordKind::hetatm);

  // Element fallback to the atom name when columns 77-78 are blank.
  const std::string no_element = kAtomN.substr(0, 76);
  const auto fb = parse_pdb(no_element + "\n");
  REQUIRE(fb.size() == 1);
  CHECK(fb[0].element == "N");
  const std::string hydrogen_name = with_columns(no_element, 13, " HA ");
  CHECK_THROWS_AS(parse_pdb(hydrogen_name), Error);

  // Two-letter elements are kept.
  CHECK(parse_pdb(with_element(kAtomN, "FE"))[0].element == "FE");
}

TEST_CASE("parse_pdb line endings and errors") {
  const std::string lf = kAtomN + "\n" + kAtomN + "\n";
  const std::string crlf = kAtomN + "   \r\n" + kAtomN + "\r\n";
  const auto a = parse_pdb(lf), b = parse_pdb(crlf);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].position == b[i].position);

  const std::string bad = with_columns(kAtomN, 31, "  11.x04");
  CHECK_THROWS_WITH_AS(parse_pdb("REMARK\n" + bad + "\n"), doctest::Contains("line 2"), Error);
  CHECK_THROWS_AS(parse_pdb(kAtomN.substr(0, 40)), Error);
}

TEST_CASE("kmeans") {
  RandomSource rng(111);
  Matrix pts(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i) pts.row(i) = testing::random_matrix(1, 3, rng, 0.1) + Eigen::RowVector3d(i < 20 ? 5.0 : -5.0, 0, 0);
  const KMeansResult km = kmeans(PointCloud(pts), 2, rng);
  for (Eigen::Index i = 1; i < 20; ++i) CHECK(km.labels[static_cast<std::size_t>(i)] == km.labels[0]);
  for (Eigen::Index i = 21; i < 40; ++i) CHECK(km.labels[static_cast<std::size_t>(i)] == km.labels[20]);
  CHECK(km.labels[0] != km.labels[20]);
  CHECK_THROWS_AS(kmeans(PointCloud(pts), 41, rng), Error);
}

TEST_CASE("fit_gmm") {
  RandomSource rng(112);
  SUBCASE("single component") {
    const Matrix pts = testing::random_matrix(200, 3, rng);
    const GmmModel g = fit_gmm(PointCloud(pts), 1, rng);
    const Eigen::RowVector3d mean = pts.colwise().mean();
    CHECK((g.means.row(0) - mean).norm() < 1e-12);
    const Matrix c = pts.rowwise() - mean;
    const Eigen::Matrix3d cov = c.transpose() * c / 200.0;
    CHECK((g.covariance - cov).cwiseAbs().maxCoeff() < 1e-5 * cov.trace());
    CHECK(g.weights == std::vector<double>{1.0});
  }
  SUBCASE("separated blobs") {
    Matrix pts(400, 3);
    for (Eigen::Index i = 0; i < 400; ++i) pts.row(i) = testing::random_matrix(1, 3, rng) + Eigen::RowVector3d(i < 200 ? 10.0 : -10.0, 0, 0);
    const GmmModel g = fit_gmm(PointCloud(pts), 2, rng);
    const Eigen::RowVector3d c1 = pts.topRows(200).colwise().mean(), c2 = pts.bottomRows(200).colwise().mean();
    for (const auto& c : {c1, c2}) {
      const double d = std::min((g.means.row(0) - c).norm(), (g.means.row(1) - c).norm());
      CHECK(d < 0.5);
    }
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("likelihood never decreases and means stay inside the data") {
    const Matrix pts = testing::random_matrix(150, 3, rng);
    const GmmModel g = fit_gmm(PointCloud(pts), 6, rng);
    REQUIRE(g.log_likelihood_trace.size() >= 2);
    for (std::size_t i = 1; i < g.log_likelihood_trace.size(); ++i) {
      CHECK(g.log_likelihood_trace[i] >= g.log_likelihood_trace[i - 1] - 1e-9);
    }
    const Eigen::RowVector3d lo = pts.colwise().minCoeff(), hi = pts.colwise().maxCoeff();
    for (Eigen::Index k = 0; k < 6; ++k) {
      CHECK((g.means.row(k) - lo).minCoeff() >= -1e-9);
      CHECK((hi - g.means.row(k)).minCoeff() >= -1e-9);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(g.covariance);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
  SUBCASE("coplanar input stays regular") {
    Matrix pts = testing::random_matrix(50, 3, rng);
    pts.col(2).setZero();
    const GmmModel g = fit_gmm(PointCloud(pts), 3, rng);
    CHECK(g.covariance(2, 2) > 0.0);
  }
  CHECK_THROWS_AS(fit_gmm(PointCloud(testing::random_matrix(3, 3, rng)), 4, rng), Error);
}

TEST_CASE("synthetic datasets") {
  for (SynthKind kind : {SynthKind::chair, SynthKind::blobs, SynthKind::helix, SynthKind::lshape}) {
    const auto a = synth_dataset(kind, 5, 40, RandomSource(113));
    const auto b = synth_dataset(kind, 5, 40, RandomSource(113));
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].size() == 40);
      CHECK(a[i].coords().cwiseAbs().maxCoeff() <= 1.0);
      CHECK(a[i] == b[i]);
    }
    CHECK_FALSE(a[0] == a[1]);
    CHECK(synth_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(synth_kind_from_string("table"), Error);
}

TEST_CASE("fixed blob mixture dataset") {
  const BlobMixture& mix = fixed_blob_mixture();
  const auto clouds = synth_dataset(SynthKind::mixture, 200, 50, RandomSource(116));
  CHECK(synth_kind_from_string("mixture") == SynthKind::mixture);
  Vec3 mean = Vec3::Zero(), expected = Vec3::Zero();
  for (Eigen::Index k = 0; k < mix.means.rows(); ++k) expected += mix.weights[static_cast<std::size_t>(k)] * Vec3(mix.means.row(k));
  double within = 0.0;
  for (const auto& c : clouds) {
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const Vec3 p(c.coords().row(i));
      mean += p;
      double nearest = 1e9;
      for (Eigen::Index k = 0; k < mix.means.rows(); ++k) nearest = std::min(nearest, (p - Vec3(mix.means.row(k))).squaredNorm());
      within += nearest;
    }
  }
  const double n = 200.0 * 50.0;
  CHECK((mean / n - expected).norm() < 0.01);
  // Blobs are well separated, so the nearest center is almost always the source: E‖p − μ‖² ≈ 3s².
  CHECK(within / n == doctest::Approx(3 * mix.scale * mix.scale).epsilon(0.05));
}

TEST_CASE("simulate_observations") {
  const PointCloud cloud = synth_dataset(SynthKind::blobs, 1, 60, RandomSource(114)).front();

  SUBCASE("projection consistency") {
    RandomSource rng(115);
    SimulationSpec spec;
    spec.projections = 1;
    spec.points_per_projection = 25;
    const ObservationSet s = simulate_observations(cloud, spec, rng);
    REQUIRE(s.size() == 1);
    const Observation& o = s.observations[0];
    CHECK(o.points.size() == 25);
    const PointCloud full = project(cloud, *o.rotation);
    for (Eigen::Index i = 0; i < o.points.size(); ++i) {
      double best = 1e300;
      for (Eigen::Index j = 0; j < full.size(); ++j) best = std::min(best, (full.point(j) - o.points.point(i)).norm());
      CHECK(best < 1e-12);
    }
  }
  SUBCASE("full projection has zero energy") {
    RandomSource rng(116);
    SimulationSpec spec;
    spec.projections = 3;
    spec.points_per_projection = 60;
    ObservationSet s = simulate_observations(cloud, spec, rng);
    s.bind(60);
    for (const auto& o : s.observations) CHECK(projection_energy(cloud, o).energy < 1e-20);
  }
  SUBCASE("coarse and subunit") {
    RandomSource rng(117);
    SimulationSpec spec;
    spec.coarse_points = 12;
    spec.subunit_points = 15;
    const ObservationSet s = simulate_observations(cloud, spec, rng);
    REQUIRE(s.size() == 2);
    CHECK(s.observations[0].kind == ObservationKind::coarse);
    CHECK(s.observations[0].points.size() == 12);
    CHECK(s.observations[1].kind == ObservationKind::subunit);
    CHECK(subunit_energy(cloud, s.observations[1]).energy < 1e-20);
  }
  SUBCASE("deterministic") {
    SimulationSpec spec;
    spec.projections = 2;
    spec.points_per_projection = 30;
    spec.coarse_points = 8;
    spec.subunit_points = 20;
    RandomSource a(118), b(118);
    CHECK(observations_to_json(simulate_observations(cloud, spec, a)) ==
          observations_to_json(simulate_observations(cloud, spec, b)));
  }
  SUBCASE("too many points") {
    RandomSource rng(119);
    SimulationSpec spec;
    spec.projections = 1;
    spec.points_per_projection = 61;
    CHECK_THROWS_AS(simulate_observations(cloud, spec, rng), Error);
    SimulationSpec coarse;
    coarse.coarse_points = 61;
    CHECK_THROWS_AS(simulate_observations(cloud, coarse, rng), Error);
  }
}
