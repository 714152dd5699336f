#include "pointdps/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pointdps {

void DiffusionConfig::validate() const {
  if (!(t_min > 0.0) || !(t_min < t_max)) throw Error("diffusion config: need 0 < t_min < t_max");
  if (!(rho >= 1.0)) throw Error("diffusion config: rho must be >= 1");
  if (!(p_std > 0.0)) throw Error("diffusion config: p_std must be positive");
}

std::vector<double> timesteps(std::size_t n, const DiffusionConfig& cfg) {
  if (n < 2) throw Error("timesteps: need at least 2 steps");
  cfg.validate();
  const double hi = std::pow(cfg.t_max, 1.0 / cfg.rho);
  const double lo = std::pow(cfg.t_min, 1.0 / cfg.rho);
  std::vector<double> t(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    t[i] = std::pow(hi + frac * (lo - hi), cfg.rho);
  }
  // Pin the endpoints against pow() round-off.
  t[0] = cfg.t_max;
  t[n - 1] = cfg.t_min;
  t[n] = 0.0;
  return t;
}

Matrix perturb(const Matrix& x0, double t, RandomSource& rng) {
  if (t < 0.0) throw Error("perturb: t must be nonnegative");
  Matrix out = x0;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += t * rng.normal();
  return out;
}

PointCloud perturb(const PointCloud& x0, double t, RandomSource& rng) {
  return PointCloud(perturb(x0.coords(), t, rng));
}

double sample_train_time(RandomSource& rng, const DiffusionConfig& cfg) {
  for (;;) {
    const double t = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
    if (t <= cfg.t_max) return t;
  }
}

double precond::loss_weight(double t) {
  const double c = c_out(std::max(t, 1e-5));
  return 1.0 / (c * c);
}

GmmDenoiser::GmmDenoiser(Matrix means, std::vector<double> weights, double scale)
    : means_(std::move(means)), weights_(std::move(weights)), scale_(scale) {
  if (means_.rows() == 0) throw Error("GmmDenoiser: no components");
  if (static_cast<std::size_t>(means_.rows()) != weights_.size()) throw Error("GmmDenoiser: weights/means mismatch");
  if (!(scale_ > 0.0)) throw Error("GmmDenoiser: scale must be positive");
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error("GmmDenoiser: weights must sum to 1");
  for (double w : weights_) {
    if (w < 0.0) throw Error("GmmDenoiser: negative weight");
  }
}

Matrix GmmDenoiser::responsibilities(const Matrix& x, double v) const {
  const Eigen::Index k = means_.rows();
  Matrix gamma(x.rows(), k);
  std::vector<double> logw(weights_.size());
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    logw[i] = weights_[i] > 0.0 ? std::log(weights_[i]) : -std::numeric_limits<double>::infinity();
  }
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
      const double d2 = (x.row(n) - means_.row(i)).squaredNorm();
      gamma(n, i) = logw[static_cast<std::size_t>(i)] - 0.5 * d2 / v;
      best = std::max(best, gamma(n, i));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      gamma(n, i) = std::exp(gamma(n, i) - best);
      sum += gamma(n, i);
    }
    gamma.row(n) /= sum;
  }
  return gamma;
}

Matrix GmmDenoiser::denoise(const Matrix& x, double t) const {
  if (x.cols() != means_.cols()) throw Error("GmmDenoiser: dimension mismatch");
  const double s2 = scale_ * scale_;
  const double v = s2 + t * t;
  const Matrix gamma = responsibilities(x, v);
  // Σ γ_i (s²x + t²μ_i)/v = (s²/v)x + (t²/v)·γμ
  return (s2 / v) * x + (t * t / v) * (gamma * means_);
}

Denoiser::Linearized GmmDenoiser::linearize(const Matrix& x, double t) const {
  if (x.cols() != means_.cols()) throw Error("GmmDenoiser: dimension mismatch");
  const double s2 = scale_ * scale_;
  const double v = s2 + t * t;
  Matrix gamma = responsibilities(x, v);
  Matrix mean_mu = gamma * means_;
  Linearized lin;
  lin.value = (s2 / v) * x + (t * t / v) * mean_mu;
  // J = (s²/v)·I + (t²/v²)·Cov_γ(μ), symmetric per point.
  lin.pullback = [this, s2, v, t, gamma = std::move(gamma), mean_mu = std::move(mean_mu)](const Matrix& ct) {
    if (ct.rows() != gamma.rows() || ct.cols() != means_.cols()) throw Error("GmmDenoiser: cotangent shape mismatch");
    Matrix out = (s2 / v) * ct;
    const double c = t * t / (v * v);
    for (Eigen::Index n = 0; n < ct.rows(); ++n) {
      for (Eigen::Index i = 0; i < means_.rows(); ++i) {
        const double g = gamma(n, i);
        if (g == 0.0) continue;
        const double proj = (means_.row(i) - mean_mu.row(n)).dot(ct.row(n));
        out.row(n) += (c * g * proj) * means_.row(i);
      }
    }
    return out;
  };
  return lin;
}

Matrix GmmDenoiser::marginal_score(const Matrix& x, double t) const {
  const double v = scale_ * scale_ + t * t;
  const Matrix gamma = responsibilities(x, v);
  return (gamma * means_ - x) / v;
}

}  // namespace pointdps
