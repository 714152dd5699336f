#include <doctest.h>

#include <cmath>

#include "pointdps/eval.hpp"
#include "pointdps/sampler.hpp"
#include "support.hpp"

using namespace pointdps;

namespace {

GmmDenoiser standard_normal() { return GmmDenoiser(Matrix::Zero(1, 3), {1.0}, 1.0); }

Schedule schedule(std::size_t steps, double t_max, const std::string& beta, bool correction = true) {
  DiffusionConfig cfg;
  cfg.t_max = t_max;
  Schedule s;
  s.timesteps = timesteps(steps, cfg);
  s.beta = BetaRule::parse(beta);
  s.correction = correction;
  return s;
}

// Counts score evaluations of the wrapped score.
class CountingScore final : public ScoreFunction {
 public:
  explicit CountingScore(const ScoreFunction& inner) : inner_(inner) {}
  Matrix score(const Matrix& x, double t) const override {
    ++calls;
    return inner_.score(x, t);
  }
  mutable std::size_t calls = 0;

 private:
  const ScoreFunction& inner_;
};

ObservationSet coarse_set(const Matrix& y, std::size_t n) {
  ObservationSet s;
  Observation o;
  o.kind = ObservationKind::coarse;
  o.points = PointCloud(y);
  s.observations.push_back(o);
  s.bind(n);
  return s;
}

}  // namespace

TEST_CASE("beta rules") {
  const BetaRule inv = BetaRule::parse("1/t");
  CHECK(inv(0.5) == 2.0);
  const BetaRule sw = BetaRule::parse("1/t@0.15");
  CHECK(sw(0.3) == doctest::Approx(1.0 / 0.3));
  CHECK(sw(0.15) == 0.0);
  CHECK(sw(0.1) == 0.0);
  const BetaRule below = BetaRule::parse("1/t@1:1");
  CHECK(below(0.5) == 1.0);
  CHECK(below(4.0) == 0.25);
  const BetaRule c = BetaRule::parse("0.5");
  CHECK(c(10.0) == 0.5);
  CHECK(BetaRule::parse("0")(1.0) == 0.0);
  for (const char* text : {"1/t", "1/t@0.15", "1/t@1:1", "0.5"}) CHECK(BetaRule::parse(BetaRule::parse(text).str()).str() == BetaRule::parse(text).str());
  for (const char* bad : {"", "t", "1/t@", "-1", "1/t@x", "1/t@1:-2"}) CHECK_THROWS_AS(BetaRule::parse(bad), Error);
}

TEST_CASE("nfe accounting") {
  const GmmDenoiser g = standard_normal();
  GuidedScore prior({&g, nullptr, 0.0});
  RandomSource rng(81);
  for (std::size_t n : {2u, 10u, 40u}) {
    CountingScore counter(prior);
    const SampleResult r = sample(counter, schedule(n, 1.0, "1/t"), 8, rng);
    CHECK(r.nfe == 2 * n - 1);
    CHECK(counter.calls == 2 * n - 1);
    const SampleResult e = sample(prior, schedule(n, 1.0, "1/t", false), 8, rng);
    CHECK(e.nfe == n);
  }
  const ObservationSet obs = coarse_set(testing::random_matrix(8, 3, rng), 8);
  GuidedScore guided({&g, &obs, 1.0});
  CHECK(sample(guided, schedule(40, 1.0, "1/t@0.15"), 8, rng).nfe == 79);
}

TEST_CASE("guided score reductions") {
  const GmmDenoiser g = standard_normal();
  RandomSource rng(82);
  const Matrix x = testing::random_matrix(6, 3, rng);
  const double t = 0.4;
  const Matrix prior = (g.denoise(x, t) - x) / (t * t);

  const ObservationSet none;
  CHECK(guided_score({&g, &none, 5.0}, x, t) == prior);
  CHECK(guided_score({&g, nullptr, 5.0}, x, t) == prior);

  // Observation equal to D(x, t) itself: zero energy, zero guidance.
  const ObservationSet exact = coarse_set(g.denoise(x, t), 6);
  CHECK(guided_score({&g, &exact, 5.0}, x, t) == prior);

  const ObservationSet other = coarse_set(testing::random_matrix(6, 3, rng), 6);
  CHECK(guided_score({&g, &other, 0.0}, x, t) == prior);
  CHECK_THROWS_AS(GuidedScore({nullptr, nullptr, 1.0}), Error);
  CHECK_THROWS_AS(GuidedScore({&g, nullptr, -1.0}), Error);
}

TEST_CASE("guidance is a descent direction for the energy of D") {
  Matrix means(3, 3);
  means << 0.5, 0, 0, -0.4, 0.3, 0.1, 0, -0.5, 0.4;
  const GmmDenoiser g(means, {0.5, 0.3, 0.2}, 0.2);
  RandomSource rng(83);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = testing::random_matrix(8, 3, rng, 0.5);
    const ObservationSet obs = coarse_set(testing::random_matrix(4, 3, rng, 0.5), 8);
    const double t = 0.3, alpha = 1.0;
    const Matrix prior = (g.denoise(x, t) - x) / (t * t);
    const Matrix guidance = guided_score({&g, &obs, alpha}, x, t) - prior;
    const double e0 = combined_energy(g.denoise(x, t), obs).energy;
    bool decreased = false;
    for (double eta = 1e-2; eta > 1e-8 && !decreased; eta /= 2) {
      decreased = combined_energy(g.denoise(x + eta * guidance, t), obs).energy < e0;
    }
    CHECK(decreased);
  }
}

TEST_CASE("flow ODE consumes no noise after the initial draw") {
  const GmmDenoiser g = standard_normal();
  GuidedScore prior({&g, nullptr, 0.0});
  RandomSource a(84), b(84);
  const SampleResult r = sample(prior, schedule(10, 5.0, "0"), 5, a);
  Matrix init(5, 3);
  for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = 5.0 * b.normal();
  CHECK(a() == b());
  RandomSource c(84);
  CHECK(sample(prior, schedule(10, 5.0, "0"), 5, c).x == r.x);
}

TEST_CASE("alpha zero reproduces unconditional sampling") {
  const GmmDenoiser g = standard_normal();
  RandomSource rng(85);
  const ObservationSet obs = coarse_set(testing::random_matrix(6, 3, rng), 6);
  RandomSource a(86), b(86);
  const SampleResult guided = sample(GuidedScore({&g, &obs, 0.0}), schedule(20, 1.0, "1/t"), 6, a);
  const SampleResult plain = sample(GuidedScore({&g, nullptr, 0.0}), schedule(20, 1.0, "1/t"), 6, b);
  CHECK(guided.x == plain.x);
}

TEST_CASE("batches are independent of thread count") {
  const GmmDenoiser g = standard_normal();
  RandomSource rng(87);
  const ObservationSet obs = coarse_set(testing::random_matrix(6, 3, rng), 6);
  GuidedScore score({&g, &obs, 1.0});
  const RandomSource base(88);
  const auto one = sample_batch(score, schedule(10, 1.0, "1/t"), 6, 5, base, 1);
  const auto four = sample_batch(score, schedule(10, 1.0, "1/t"), 6, 5, base, 4);
  for (std::size_t i = 0; i < 5; ++i) CHECK(one[i].x == four[i].x);
  CHECK(one[0].x != one[1].x);
}

TEST_CASE("unconditional sampling of a standard normal") {
  const GmmDenoiser g = standard_normal();
  GuidedScore prior({&g, nullptr, 0.0});
  const auto runs = sample_batch(prior, schedule(40, 80.0, "1/t"), 1, 400, RandomSource(89), 1);
  Eigen::RowVector3d mean = Eigen::RowVector3d::Zero(), sq = Eigen::RowVector3d::Zero();
  for (const auto& r : runs) {
    mean += r.x.row(0);
    sq += r.x.row(0).cwiseAbs2();
  }
  mean /= 400.0;
  sq /= 400.0;
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(mean(k)) < 0.2);
    CHECK(sq(k) - mean(k) * mean(k) > 0.75);
    CHECK(sq(k) - mean(k) * mean(k) < 1.25);
  }
}

TEST_CASE("maximum likelihood baseline") {
  RandomSource rng(90);
  const Matrix target = testing::random_matrix(12, 3, rng, 0.5);
  const ObservationSet obs = coarse_set(target, 12);

  RandomSource r0(91);
  const MlResult zero = ml_reconstruct(obs, 12, 0, 0.01, r0);
  CHECK(zero.x.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(zero.energy_trace.size() == 1);
  RandomSource r0b(91);
  Matrix init(12, 3);
  for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = r0b.uniform(-1.0, 1.0);
  CHECK(zero.x == init);

  RandomSource r1(92);
  const MlResult fit = ml_reconstruct(obs, 12, 300, 0.01, r1);
  CHECK(fit.best_energy <= fit.initial_energy);
  CHECK(fit.energy_trace.size() == 301);
  CHECK(emd(PointCloud(fit.x), PointCloud(target)) < 0.01);

  const auto a = ml_batch(obs, 12, 20, 0.01, 3, RandomSource(93), 1);
  const auto b = ml_batch(obs, 12, 20, 0.01, 3, RandomSource(93), 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].x == b[i].x);
  CHECK_THROWS_AS(ml_reconstruct(ObservationSet{}, 4, 1, 0.01, r1), Error);
}
