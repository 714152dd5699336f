#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pointdps/core.hpp"
#include "pointdps/random.hpp"

namespace pointdps {

/// Zero-drift diffusion with g(t) = √(2t): x(t) = x(0) + t·ε.
struct DiffusionConfig {
  double t_min = 0.002;
  double t_max = 80.0;
  double rho = 3.0;
  double p_mean = -1.2;  // ln t ~ N(p_mean, p_std²) during training
  double p_std = 1.2;
  double c_noise_scale = 1000.0;

  void validate() const;
};

/// t_0 = t_max > … > t_{N−1} = t_min > t_N = 0 (N+1 entries).
std::vector<double> timesteps(std::size_t n, const DiffusionConfig& cfg);

Matrix perturb(const Matrix& x0, double t, RandomSource& rng);
PointCloud perturb(const PointCloud& x0, double t, RandomSource& rng);

/// Log-normal training time, redrawn while it exceeds t_max.
double sample_train_time(RandomSource& rng, const DiffusionConfig& cfg);

// Preconditioning for data of scale 0.5. c_out carries a 0.25 prefactor.
namespace precond {
constexpr double kSigmaData2 = 0.25;
inline double c_skip(double t) { return kSigmaData2 / (t * t + kSigmaData2); }
inline double c_out(double t) { return 0.25 * t / std::sqrt(t * t + kSigmaData2); }
inline double c_in(double t) { return 1.0 / std::sqrt(t * t + kSigmaData2); }
/// DSM loss weight 1/c_out², with t floored at 1e-5.
double loss_weight(double t);
}  // namespace precond

/// D(x, t) ≈ E[x(0) | x(t) = x] together with its vector-Jacobian product.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  struct Linearized {
    Matrix value;
    /// Jᵀ·cotangent at the linearization point.
    std::function<Matrix(const Matrix&)> pullback;
  };

  virtual Matrix denoise(const Matrix& x, double t) const = 0;
  virtual Linearized linearize(const Matrix& x, double t) const = 0;

  Matrix vjp(const Matrix& x, double t, const Matrix& cotangent) const {
    return linearize(x, t).pullback(cotangent);
  }
};

/// Exact posterior-mean denoiser for i.i.d. points from the isotropic
/// mixture Σ w_i N(μ_i, s²I). Each point (row) is denoised independently.
class GmmDenoiser final : public Denoiser {
 public:
  /// means: K×D, weights: K entries summing to 1, scale s > 0.
  GmmDenoiser(Matrix means, std::vector<double> weights, double scale);

  Matrix denoise(const Matrix& x, double t) const override;
  Linearized linearize(const Matrix& x, double t) const override;

  /// ∇ log p_t for the widened mixture Σ w_i N(μ_i, (s²+t²)I), row by row.
  Matrix marginal_score(const Matrix& x, double t) const;

  const Matrix& means() const { return means_; }
  const std::vector<double>& weights() const { return weights_; }
  double scale() const { return scale_; }

 private:
  // Row-wise responsibilities (N×K) under variance v = s²+t².
  Matrix responsibilities(const Matrix& x, double v) const;

  Matrix means_;
  std::vector<double> weights_;
  double scale_;
};

}  // namespace pointdps
