#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pointdps/diffusion.hpp"

namespace pointdps {

struct NetArch {
  int point_dim = 3;
  int hidden = 64;
  int layers = 2;     // SiLU layers in the encoder and again in the decoder
  int embed_dim = 16;  // sinusoidal embedding of c_noise(t), even

  std::size_t param_count() const;
  void validate() const;
};

/// Preconditioned point-set denoiser
///   D(x, t) = c_skip(t)·x + c_out(t)·F(c_in(t)·x, c_noise(t)).
///
/// F is a per-point encoder MLP, a mean-pooled global feature concatenated
/// back onto every point, and a per-point decoder MLP, with the time
/// embedding fed to both MLPs. Mean pooling makes F permutation-equivariant.
/// The output layer is zero at initialization, so a fresh network returns
/// c_skip·x.
class NetDenoiser final : public Denoiser {
 public:
  NetDenoiser(NetArch arch, double c_noise_scale, RandomSource& rng);
  NetDenoiser(NetArch arch, double c_noise_scale, std::vector<double> params);

  Matrix denoise(const Matrix& x, double t) const override;
  Linearized linearize(const Matrix& x, double t) const override;

  /// Raw network output F for preconditioned inputs.
  Matrix raw_output(const Matrix& x, double t) const;

  /// Accumulates ∂⟨dD, D(x,t)⟩/∂θ into `grad` (length param_count()).
  void accumulate_param_grad(const Matrix& x, double t, const Matrix& d_denoised, std::span<double> grad) const;

  const NetArch& arch() const { return arch_; }
  double c_noise_scale() const { return c_noise_scale_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<double> time_embedding(double t) const;

 private:
  struct Tape;
  Tape forward(const Matrix& x, double t) const;
  // Returns ∂/∂(input) for a cotangent dF on F; adds θ-gradients if `grad` is nonempty.
  Matrix backward(const Tape& tape, const Matrix& d_out, std::span<double> grad) const;

  NetArch arch_;
  double c_noise_scale_;
  std::vector<double> params_;
};

struct TrainSample {
  Matrix clean;   // x(0), N×3
  double t = 1.0;
  Matrix noise;   // ε, N×3; x(t) = x(0) + t·ε
};

struct DsmResult {
  double loss = 0.0;          // mean over the batch of λ(t)·‖x(0) − D(x(t), t)‖²
  std::vector<double> grad;   // ∂loss/∂θ
};

DsmResult dsm_step(const NetDenoiser& net, std::span<const TrainSample> batch);

enum class Augmentation { none, orthogonal, proper };

std::string to_string(Augmentation a);
Augmentation augmentation_from_string(const std::string& s);

struct TrainPhase {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  double p_mean = -1.2;
  double p_std = 1.2;
  double t_max = 80.0;
};

struct TrainOptions {
  std::vector<TrainPhase> phases;
  Augmentation augmentation = Augmentation::orthogonal;
  /// Called after every epoch with (global epoch index, mean epoch loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Trains `net` in place with Adam; optimizer state carries over between phases.
TrainLog train(NetDenoiser& net, const std::vector<PointCloud>& dataset, const DiffusionConfig& cfg,
               const TrainOptions& options, RandomSource& rng);

// Model JSON: { "arch": {...}, "c_noise_scale": f, "params": [...], "train_meta": {...} }
std::string model_to_json(const NetDenoiser& net, const nlohmann::json& train_meta = nlohmann::json::object());
NetDenoiser model_from_json(const std::string& text);
NetDenoiser read_model(const std::filesystem::path& path);
void write_model(const std::filesystem::path& path, const NetDenoiser& net,
                 const nlohmann::json& train_meta = nlohmann::json::object());

}  // namespace pointdps
