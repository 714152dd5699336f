#include "pointdps/network.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "pointdps/optim.hpp"

namespace pointdps {

using nlohmann::json;

namespace {

struct Layer {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  std::size_t w = 0;  // offset of the out×in row-major weight block
  std::size_t b = 0;  // offset of the bias
};

struct Layout {
  std::vector<Layer> encoder;
  std::vector<Layer> decoder;
  Layer head;
  std::size_t total = 0;
};

Layout make_layout(const NetArch& a) {
  Layout l;
  std::size_t off = 0;
  auto add = [&](Eigen::Index in, Eigen::Index out) {
    Layer layer{in, out, off, off + static_cast<std::size_t>(in * out)};
    off = layer.b + static_cast<std::size_t>(out);
    return layer;
  };
  const Eigen::Index p = a.point_dim, h = a.hidden, e = a.embed_dim;
  for (int i = 0; i < a.layers; ++i) l.encoder.push_back(add(i == 0 ? p + e : h, h));
  for (int i = 0; i < a.layers; ++i) l.decoder.push_back(add(i == 0 ? 2 * h + e : h, h));
  l.head = add(h, p);
  l.total = off;
  return l;
}

using ConstMap = Eigen::Map<const Matrix>;
using RowMap = Eigen::Map<const Eigen::RowVectorXd>;

Matrix affine(const Matrix& in, const Layer& layer, const std::vector<double>& params) {
  ConstMap w(params.data() + layer.w, layer.out, layer.in);
  RowMap b(params.data() + layer.b, layer.out);
  Matrix z = in * w.transpose();
  z.rowwise() += b;
  return z;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix silu(const Matrix& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_grad(const Matrix& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

// Backprop through z = in·Wᵀ + b; returns ∂/∂in.
Matrix affine_backward(const Matrix& in, const Matrix& dz, const Layer& layer, const std::vector<double>& params,
                       std::span<double> grad) {
  ConstMap w(params.data() + layer.w, layer.out, layer.in);
  if (!grad.empty()) {
    Eigen::Map<Matrix> dw(grad.data() + layer.w, layer.out, layer.in);
    Eigen::Map<Eigen::RowVectorXd> db(grad.data() + layer.b, layer.out);
    dw.noalias() += dz.transpose() * in;
    db += dz.colwise().sum();
  }
  return dz * w;
}

}  // namespace

std::size_t NetArch::param_count() const { return make_layout(*this).total; }

void NetArch::validate() const {
  if (point_dim < 1 || hidden < 1 || layers < 1 || embed_dim < 2 || embed_dim % 2 != 0) {
    throw Error("network arch: need point_dim, hidden, layers >= 1 and an even embed_dim >= 2");
  }
}

struct NetDenoiser::Tape {
  double t = 0.0;
  Eigen::Index n = 0;
  std::vector<Matrix> enc_in, enc_z;  // per layer input and pre-activation
  std::vector<Matrix> dec_in, dec_z;
  Matrix head_in;
  Matrix out;  // F
};

NetDenoiser::NetDenoiser(NetArch arch, double c_noise_scale, RandomSource& rng)
    : arch_(arch), c_noise_scale_(c_noise_scale) {
  arch_.validate();
  const Layout layout = make_layout(arch_);
  params_.assign(layout.total, 0.0);
  auto init = [&](const Layer& layer) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (Eigen::Index i = 0; i < layer.in * layer.out; ++i) params_[layer.w + static_cast<std::size_t>(i)] = sd * rng.normal();
  };
  for (const auto& l : layout.encoder) init(l);
  for (const auto& l : layout.decoder) init(l);
  // head stays zero
}

NetDenoiser::NetDenoiser(NetArch arch, double c_noise_scale, std::vector<double> params)
    : arch_(arch), c_noise_scale_(c_noise_scale), params_(std::move(params)) {
  arch_.validate();
  if (params_.size() != arch_.param_count()) {
    throw Error("network: expected " + std::to_string(arch_.param_count()) + " parameters, got " +
                std::to_string(params_.size()));
  }
  for (double p : params_) {
    if (!std::isfinite(p)) throw Error("network: non-finite parameter");
  }
}

std::vector<double> NetDenoiser::time_embedding(double t) const {
  const int half = arch_.embed_dim / 2;
  const double c_noise = c_noise_scale_ * t;
  std::vector<double> emb(static_cast<std::size_t>(arch_.embed_dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / std::max(half - 1, 1));
    emb[static_cast<std::size_t>(k)] = std::cos(c_noise * freq);
    emb[static_cast<std::size_t>(half + k)] = std::sin(c_noise * freq);
  }
  return emb;
}

NetDenoiser::Tape NetDenoiser::forward(const Matrix& x, double t) const {
  if (x.cols() != arch_.point_dim) throw Error("network: input dimension mismatch");
  if (x.rows() == 0) throw Error("network: empty input");
  const Layout layout = make_layout(arch_);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = arch_.point_dim, h = arch_.hidden, e = arch_.embed_dim;
  const auto emb_vec = time_embedding(t);
  const RowMap emb(emb_vec.data(), e);

  Tape tape;
  tape.t = t;
  tape.n = n;

  Matrix a(n, p + e);
  a.leftCols(p) = precond::c_in(t) * x;
  a.rightCols(e).rowwise() = emb;
  for (const auto& layer : layout.encoder) {
    tape.enc_in.push_back(a);
    tape.enc_z.push_back(affine(a, layer, params_));
    a = silu(tape.enc_z.back());
  }

  Matrix u(n, 2 * h + e);
  u.leftCols(h) = a;
  u.middleCols(h, h).rowwise() = Eigen::RowVectorXd(a.colwise().mean());
  u.rightCols(e).rowwise() = emb;
  for (const auto& layer : layout.decoder) {
    tape.dec_in.push_back(u);
    tape.dec_z.push_back(affine(u, layer, params_));
    u = silu(tape.dec_z.back());
  }
  tape.head_in = u;
  tape.out = affine(u, layout.head, params_);
  return tape;
}

Matrix NetDenoiser::backward(const Tape& tape, const Matrix& d_out, std::span<double> grad) const {
  const Layout layout = make_layout(arch_);
  const Eigen::Index p = arch_.point_dim, h = arch_.hidden;
  const auto n = static_cast<double>(tape.n);

  Matrix du = affine_backward(tape.head_in, d_out, layout.head, params_, grad);
  for (std::size_t l = layout.decoder.size(); l-- > 0;) {
    const Matrix dz = du.cwiseProduct(silu_grad(tape.dec_z[l]));
    du = affine_backward(tape.dec_in[l], dz, layout.decoder[l], params_, grad);
  }
  // Split [h_i, mean_j h_j, emb]; the pooled slot feeds back to every point.
  Matrix da = du.leftCols(h);
  da.rowwise() += Eigen::RowVectorXd(du.middleCols(h, h).colwise().sum() / n);
  for (std::size_t l = layout.encoder.size(); l-- > 0;) {
    const Matrix dz = da.cwiseProduct(silu_grad(tape.enc_z[l]));
    da = affine_backward(tape.enc_in[l], dz, layout.encoder[l], params_, grad);
  }
  return da.leftCols(p);
}

Matrix NetDenoiser::raw_output(const Matrix& x, double t) const { return forward(x, t).out; }

Matrix NetDenoiser::denoise(const Matrix& x, double t) const {
  if (t == 0.0) return x;
  return precond::c_skip(t) * x + precond::c_out(t) * forward(x, t).out;
}

Denoiser::Linearized NetDenoiser::linearize(const Matrix& x, double t) const {
  Linearized lin;
  if (t == 0.0) {
    lin.value = x;
    lin.pullback = [](const Matrix& ct) { return ct; };
    return lin;
  }
  auto tape = std::make_shared<Tape>(forward(x, t));
  lin.value = precond::c_skip(t) * x + precond::c_out(t) * tape->out;
  lin.pullback = [this, tape, t](const Matrix& ct) {
    if (ct.rows() != tape->n || ct.cols() != arch_.point_dim) throw Error("network: cotangent shape mismatch");
    const Matrix d_in = backward(*tape, precond::c_out(t) * ct, {});
    return Matrix(precond::c_skip(t) * ct + precond::c_in(t) * d_in);
  };
  return lin;
}

void NetDenoiser::accumulate_param_grad(const Matrix& x, double t, const Matrix& d_denoised,
                                        std::span<double> grad) const {
  if (grad.size() != params_.size()) throw Error("network: gradient buffer size mismatch");
  if (t == 0.0) return;
  const Tape tape = forward(x, t);
  backward(tape, precond::c_out(t) * d_denoised, grad);
}

DsmResult dsm_step(const NetDenoiser& net, std::span<const TrainSample> batch) {
  if (batch.empty()) throw Error("dsm_step: empty batch");
  DsmResult res;
  res.grad.assign(net.params().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const Matrix xt = s.clean + s.t * s.noise;
    const Matrix d = net.denoise(xt, s.t);
    const double lambda = precond::loss_weight(s.t);
    const Matrix resid = d - s.clean;
    res.loss += inv_b * lambda * resid.squaredNorm();
    net.accumulate_param_grad(xt, s.t, (2.0 * lambda * inv_b) * resid, res.grad);
  }
  return res;
}

std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::none: return "none";
    case Augmentation::orthogonal: return "orthogonal";
    case Augmentation::proper: return "proper";
  }
  return "unknown";
}

Augmentation augmentation_from_string(const std::string& s) {
  if (s == "none") return Augmentation::none;
  if (s == "orthogonal") return Augmentation::orthogonal;
  if (s == "proper") return Augmentation::proper;
  throw Error("unknown augmentation '" + s + "'");
}

TrainLog train(NetDenoiser& net, const std::vector<PointCloud>& dataset, const DiffusionConfig& cfg,
               const TrainOptions& options, RandomSource& rng) {
  if (dataset.empty()) throw Error("train: empty dataset");
  const Eigen::Index n = dataset.front().size();
  for (const auto& c : dataset) {
    if (c.size() != n || c.dim() != net.arch().point_dim) throw Error("train: clouds must share size and dimension");
  }

  TrainLog log;
  Adam adam(net.params().size());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int epoch_index = 0;

  for (const auto& phase : options.phases) {
    if (phase.batch_size < 1 || phase.epochs < 0) throw Error("train: invalid phase");
    DiffusionConfig phase_cfg = cfg;
    phase_cfg.p_mean = phase.p_mean;
    phase_cfg.p_std = phase.p_std;
    phase_cfg.t_max = phase.t_max;
    adam.set_lr(phase.lr);

    for (int epoch = 0; epoch < phase.epochs; ++epoch, ++epoch_index) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
      double epoch_loss = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(phase.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(phase.batch_size));
        std::vector<TrainSample> batch;
        batch.reserve(stop - start);
        for (std::size_t k = start; k < stop; ++k) {
          TrainSample s;
          const Matrix& x0 = dataset[order[k]].coords();
          switch (options.augmentation) {
            case Augmentation::none: s.clean = x0; break;
            case Augmentation::orthogonal: s.clean = x0 * random_orthogonal(rng, false).matrix(); break;
            case Augmentation::proper: s.clean = x0 * random_orthogonal(rng, true).matrix(); break;
          }
          s.t = sample_train_time(rng, phase_cfg);
          s.noise = perturb(Matrix::Zero(x0.rows(), x0.cols()), 1.0, rng);
          batch.push_back(std::move(s));
        }
        const DsmResult r = dsm_step(net, batch);
        adam.step(net.params(), r.grad);
        epoch_loss += r.loss;
        ++batches;
        ++log.steps;
      }
      epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
      log.epoch_loss.push_back(epoch_loss);
      if (options.on_epoch) options.on_epoch(epoch_index, epoch_loss);
    }
  }
  return log;
}

std::string model_to_json(const NetDenoiser& net, const json& train_meta) {
  json root;
  root["arch"] = {{"point_dim", net.arch().point_dim},
                  {"hidden", net.arch().hidden},
                  {"layers", net.arch().layers},
                  {"embed_dim", net.arch().embed_dim}};
  root["c_noise_scale"] = net.c_noise_scale();
  root["params"] = net.params();
  root["train_meta"] = train_meta;
  return root.dump() + "\n";
}

NetDenoiser model_from_json(const std::string& text) {
  try {
    const json root = json::parse(text);
    NetArch arch;
    const auto& a = root.at("arch");
    arch.point_dim = a.at("point_dim").get<int>();
    arch.hidden = a.at("hidden").get<int>();
    arch.layers = a.at("layers").get<int>();
    arch.embed_dim = a.at("embed_dim").get<int>();
    return NetDenoiser(arch, root.at("c_noise_scale").get<double>(), root.at("params").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

NetDenoiser read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

void write_model(const std::filesystem::path& path, const NetDenoiser& net, const json& train_meta) {
  write_file_atomic(path, model_to_json(net, train_meta));
}

}  // namespace pointdps
