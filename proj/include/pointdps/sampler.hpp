#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pointdps/diffusion.hpp"
#include "pointdps/likelihood.hpp"

namespace pointdps {

/// Noise-control function β(t): `expr` above `threshold`, `below` otherwise.
///
/// Text form: "<expr>[@<threshold>[:<below>]]" with expr either "1/t" or a
/// number, e.g. "1/t", "0", "1/t@0.15", "1/t@1:1".
struct BetaRule {
  bool inverse_t = true;
  double constant = 0.0;                // used when !inverse_t
  std::optional<double> threshold;
  double below = 0.0;

  double operator()(double t) const;

  static BetaRule parse(const std::string& text);
  std::string str() const;
};

struct Schedule {
  std::vector<double> timesteps;  // t_0 > … > t_N = 0
  BetaRule beta;
  /// Second-order correction. Off: plain Euler(-Maruyama) steps.
  bool correction = true;

  std::size_t steps() const { return timesteps.empty() ? 0 : timesteps.size() - 1; }
  void validate() const;
};

/// Approximate ∇ log p_t(x | y) as a function of (x, t).
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;
  virtual Matrix score(const Matrix& x, double t) const = 0;
};

/// Prior score (D(x,t) − x)/t² plus reconstruction guidance
/// −ζ·J_Dᵀ∇E(D(x,t)) with ζ = α/√E. The guidance term is dropped when there
/// are no observations, α = 0, or E < 1e-12.
struct GuidedScoreContext {
  const Denoiser* denoiser = nullptr;
  const ObservationSet* observations = nullptr;  // must be bound to N
  double alpha = 0.0;
};

class GuidedScore final : public ScoreFunction {
 public:
  explicit GuidedScore(GuidedScoreContext ctx);
  Matrix score(const Matrix& x, double t) const override;

 private:
  GuidedScoreContext ctx_;
};

Matrix guided_score(const GuidedScoreContext& ctx, const Matrix& x, double t);

struct SampleResult {
  Matrix x;
  std::size_t nfe = 0;  // score evaluations
};

/// One chain: x(t_0) ~ N(0, t_0²I), then per step a predictor
///   x' = x + t_i·s(x, t_i)·Δt
/// and, unless t_{i+1} = 0, the corrector
///   x ← x + (t_i + β(t_i)t_i²)·[s(x, t_i) + s(x', t_{i+1})]·Δt/2 + n,
///   n ~ N(0, 2β(t_i)t_i²Δt·I).
/// N steps cost 2N−1 score evaluations with correction, N without.
SampleResult sample(const ScoreFunction& score, const Schedule& sched, std::size_t n_points, RandomSource& rng);

/// B independent chains; chain b draws from base.split(b).
std::vector<SampleResult> sample_batch(const ScoreFunction& score, const Schedule& sched, std::size_t n_points,
                                       std::size_t chains, const RandomSource& base, std::size_t threads = 1);

struct MlResult {
  Matrix x;                    // best-energy iterate
  double initial_energy = 0.0;
  double best_energy = 0.0;
  std::vector<double> energy_trace;  // energy of every visited iterate
};

/// Maximum-likelihood baseline: Adam on the combined energy from a uniform
/// random start in [−1, 1]³. Returns the lowest-energy iterate.
MlResult ml_reconstruct(const ObservationSet& observations, std::size_t n_points, std::size_t steps, double lr,
                        RandomSource& rng);

std::vector<MlResult> ml_batch(const ObservationSet& observations, std::size_t n_points, std::size_t steps, double lr,
                               std::size_t runs, const RandomSource& base, std::size_t threads = 1);

}  // namespace pointdps
