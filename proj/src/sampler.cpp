#include "pointdps/sampler.hpp"

#include <cmath>
#include <sstream>

#include "pointdps/optim.hpp"
#include "pointdps/parallel.hpp"

namespace pointdps {

double BetaRule::operator()(double t) const {
  if (threshold && !(t > *threshold)) return below;
  if (!inverse_t) return constant;
  return t > 0.0 ? 1.0 / t : 0.0;
}

namespace {

double parse_number(const std::string& s, const std::string& full) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw Error("invalid beta rule '" + full + "'");
  return v;
}

}  // namespace

BetaRule BetaRule::parse(const std::string& text) {
  BetaRule rule;
  std::string expr = text;
  const auto at = text.find('@');
  if (at != std::string::npos) {
    expr = text.substr(0, at);
    std::string rest = text.substr(at + 1);
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      rule.below = parse_number(rest.substr(colon + 1), text);
      rest = rest.substr(0, colon);
    }
    rule.threshold = parse_number(rest, text);
  }
  if (expr == "1/t") {
    rule.inverse_t = true;
  } else {
    rule.inverse_t = false;
    rule.constant = parse_number(expr, text);
  }
  if (rule.constant < 0.0 || rule.below < 0.0) throw Error("beta rule must be nonnegative: '" + text + "'");
  return rule;
}

std::string BetaRule::str() const {
  std::ostringstream os;
  if (inverse_t) {
    os << "1/t";
  } else {
    os << constant;
  }
  if (threshold) {
    os << '@' << *threshold;
    if (below != 0.0) os << ':' << below;
  }
  return os.str();
}

void Schedule::validate() const {
  if (timesteps.size() < 2) throw Error("schedule: need at least one step");
  if (timesteps.back() != 0.0) throw Error("schedule: last timestep must be 0");
  for (std::size_t i = 0; i + 1 < timesteps.size(); ++i) {
    if (!(timesteps[i] > timesteps[i + 1])) throw Error("schedule: timesteps must strictly decrease");
    if (!(beta(timesteps[i]) >= 0.0)) throw Error("schedule: beta must be nonnegative");
  }
}

GuidedScore::GuidedScore(GuidedScoreContext ctx) : ctx_(ctx) {
  if (!ctx_.denoiser) throw Error("guided score: no denoiser");
  if (ctx_.alpha < 0.0) throw Error("guided score: alpha must be nonnegative");
}

Matrix GuidedScore::score(const Matrix& x, double t) const { return guided_score(ctx_, x, t); }

Matrix guided_score(const GuidedScoreContext& ctx, const Matrix& x, double t) {
  if (!(t > 0.0)) throw Error("guided score: t must be positive");
  const bool guided = ctx.observations && !ctx.observations->empty() && ctx.alpha != 0.0;
  if (!guided) {
    return (ctx.denoiser->denoise(x, t) - x) / (t * t);
  }
  const Denoiser::Linearized lin = ctx.denoiser->linearize(x, t);
  Matrix s = (lin.value - x) / (t * t);
  const CombinedEnergy e = combined_energy(lin.value, *ctx.observations);
  if (e.energy >= 1e-12) {
    const double zeta = ctx.alpha / std::sqrt(e.energy);
    // ∇ log p_0(y | D) = −∇E, pulled back through D.
    s -= zeta * lin.pullback(e.gradient);
  }
  return s;
}

SampleResult sample(const ScoreFunction& score, const Schedule& sched, std::size_t n_points, RandomSource& rng) {
  sched.validate();
  const auto& ts = sched.timesteps;
  SampleResult res;
  const auto n = static_cast<Eigen::Index>(n_points);
  res.x = Matrix(n, 3);
  for (Eigen::Index i = 0; i < res.x.size(); ++i) res.x.data()[i] = ts[0] * rng.normal();

  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double t = ts[i];
    const double t_next = ts[i + 1];
    const double dt = t - t_next;
    const Matrix s = score.score(res.x, t);
    ++res.nfe;
    if (t_next == 0.0) {
      res.x += (t * dt) * s;
      continue;
    }
    const double beta = sched.beta(t);
    const double drift = t + beta * t * t;
    Matrix step;
    if (sched.correction) {
      const Matrix predicted = res.x + (t * dt) * s;
      const Matrix s_next = score.score(predicted, t_next);
      ++res.nfe;
      step = (drift * dt / 2.0) * (s + s_next);
    } else {
      step = (drift * dt) * s;
    }
    const double noise_sd = std::sqrt(2.0 * beta * t * t * dt);
    if (noise_sd > 0.0) {
      for (Eigen::Index k = 0; k < step.size(); ++k) step.data()[k] += noise_sd * rng.normal();
    }
    res.x += step;
  }
  return res;
}

std::vector<SampleResult> sample_batch(const ScoreFunction& score, const Schedule& sched, std::size_t n_points,
                                       std::size_t chains, const RandomSource& base, std::size_t threads) {
  std::vector<SampleResult> out(chains);
  parallel_for(chains, threads, [&](std::size_t b) {
    RandomSource rng = base.split(b);
    out[b] = sample(score, sched, n_points, rng);
  });
  return out;
}

MlResult ml_reconstruct(const ObservationSet& observations, std::size_t n_points, std::size_t steps, double lr,
                        RandomSource& rng) {
  if (observations.empty()) throw Error("ml_reconstruct: no observations");
  const auto n = static_cast<Eigen::Index>(n_points);
  Matrix x(n, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);

  MlResult res;
  Adam adam(static_cast<std::size_t>(x.size()), lr);
  for (std::size_t k = 0;; ++k) {
    const CombinedEnergy e = combined_energy(x, observations);
    res.energy_trace.push_back(e.energy);
    if (k == 0) {
      res.initial_energy = e.energy;
      res.best_energy = e.energy;
      res.x = x;
    } else if (e.energy < res.best_energy) {
      res.best_energy = e.energy;
      res.x = x;
    }
    if (k == steps) break;
    adam.step(std::span<double>(x.data(), static_cast<std::size_t>(x.size())),
              std::span<const double>(e.gradient.data(), static_cast<std::size_t>(e.gradient.size())));
  }
  return res;
}

std::vector<MlResult> ml_batch(const ObservationSet& observations, std::size_t n_points, std::size_t steps, double lr,
                               std::size_t runs, const RandomSource& base, std::size_t threads) {
  std::vector<MlResult> out(runs);
  parallel_for(runs, threads, [&](std::size_t b) {
    RandomSource rng = base.split(b);
    out[b] = ml_reconstruct(observations, n_points, steps, lr, rng);
  });
  return out;
}

}  // namespace pointdps
