#include "pointdps/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pointdps/assignment.hpp"
#include "pointdps/parallel.hpp"

namespace pointdps {

Matrix RigidTransform::apply(const Matrix& points) const {
  Matrix out = scale * (points * rotation.matrix());
  out.rowwise() += translation.transpose();
  return out;
}

double geodesic_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

namespace {

void require_same_shape(const PointCloud& x, const PointCloud& y, const char* what) {
  if (x.size() != y.size()) {
    throw Error(std::string(what) + ": size mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) +
                ")");
  }
  if (x.dim() != y.dim()) throw Error(std::string(what) + ": dimension mismatch");
  if (x.empty()) throw Error(std::string(what) + ": empty clouds");
}

}  // namespace

double chamfer(const PointCloud& x, const PointCloud& y) {
  require_same_shape(x, y, "chamfer");
  const Eigen::Index n = x.size();
  std::vector<double> d2;
  squared_distance_costs(x.coords(), y.coords(), d2);
  double forward = 0.0, backward = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) best = std::min(best, d2[static_cast<std::size_t>(i * n + j)]);
    forward += std::sqrt(best);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) best = std::min(best, d2[static_cast<std::size_t>(i * n + j)]);
    backward += std::sqrt(best);
  }
  return (forward + backward) / static_cast<double>(n);
}

double emd(const PointCloud& x, const PointCloud& y) {
  require_same_shape(x, y, "emd");
  std::vector<double> d;
  distance_costs(x.coords(), y.coords(), d);
  const auto n = static_cast<std::size_t>(x.size());
  return solve_lap(CostView{d, n, n}).cost / static_cast<double>(n);
}

double radius_of_gyration(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("radius_of_gyration: empty cloud");
  const Matrix c = cloud.coords().rowwise() - cloud.centroid();
  return std::sqrt(c.rowwise().squaredNorm().mean());
}

PointCloud gyration_scale(const PointCloud& model, double target_rg) {
  const double rg = radius_of_gyration(model);
  if (!(rg > 0.0)) throw Error("gyration_scale: zero radius of gyration");
  if (!(target_rg > 0.0)) throw Error("gyration_scale: target radius must be positive");
  Matrix c = model.coords().rowwise() - model.centroid();
  c *= target_rg / rg;
  return PointCloud(std::move(c));
}

double kernel_correlation(const Matrix& a, const Matrix& b, double bandwidth) {
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  double f = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) f += std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
  }
  return f;
}

namespace {

// The 24 proper rotations of the cube: signed permutation matrices, det +1.
std::vector<Eigen::Matrix3d> octahedral_group() {
  std::vector<Eigen::Matrix3d> out;
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& p : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
      for (int r = 0; r < 3; ++r) m(r, p[r]) = (signs >> r & 1) ? -1.0 : 1.0;
      if (m.determinant() > 0.0) out.push_back(m);
    }
  }
  return out;
}

// Super-Fibonacci spiral on the unit quaternion sphere.
std::vector<Eigen::Matrix3d> super_fibonacci(std::size_t n) {
  constexpr double phi = std::numbers::sqrt2;
  constexpr double psi = 1.533751168755204288118041;
  std::vector<Eigen::Matrix3d> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) + 0.5;
    const double r = std::sqrt(s / static_cast<double>(n));
    const double big_r = std::sqrt(1.0 - s / static_cast<double>(n));
    const double a = 2.0 * std::numbers::pi * s / phi;
    const double b = 2.0 * std::numbers::pi * s / psi;
    Eigen::Quaterniond q(big_r * std::cos(b), r * std::sin(a), r * std::cos(a), big_r * std::sin(b));
    out.push_back(q.normalized().toRotationMatrix());
  }
  return out;
}

std::vector<Eigen::Matrix3d> rotation_grid(std::size_t size) {
  const auto group = octahedral_group();
  const std::size_t base_count = std::max<std::size_t>(1, (size + group.size() - 1) / group.size());
  std::vector<Eigen::Matrix3d> grid;
  grid.reserve(base_count * group.size());
  for (const auto& base : super_fibonacci(base_count)) {
    for (const auto& g : group) grid.push_back(g * base);
  }
  return grid;
}

// Every k-th row so that at most `limit` rows remain.
Matrix strided_rows(const Matrix& m, Eigen::Index limit) {
  if (m.rows() <= limit) return m;
  const Eigen::Index stride = (m.rows() + limit - 1) / limit;
  Matrix out((m.rows() + stride - 1) / stride, m.cols());
  for (Eigen::Index i = 0, k = 0; i < m.rows(); i += stride, ++k) out.row(k) = m.row(i);
  return out;
}

struct KcState {
  Eigen::Matrix3d rotation;  // applied to centered model rows
  Vec3 shift;                // added on top of the target centroid
};

// Objective and ascent direction at one state. Points are r_n = m_n·R;
// q_n = r_n + center + shift.
struct KcEval {
  double f = 0.0;
  Vec3 grad_rot = Vec3::Zero();
  Vec3 grad_shift = Vec3::Zero();
  double curv_rot = 0.0;
  double curv_shift = 0.0;
};

KcEval kc_evaluate(const Matrix& centered_model, const Matrix& target, const Eigen::RowVector3d& center,
                   const KcState& st, double h, bool with_grad) {
  const double inv = 1.0 / (2.0 * h * h);
  const Matrix r = centered_model * st.rotation;
  KcEval ev;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    const Eigen::RowVector3d q = r.row(i) + center + st.shift.transpose();
    Eigen::RowVector3d g = Eigen::RowVector3d::Zero();
    double ksum = 0.0;
    for (Eigen::Index j = 0; j < target.rows(); ++j) {
      const Eigen::RowVector3d d = q - target.row(j);
      const double k = std::exp(-d.squaredNorm() * inv);
      ksum += k;
      if (with_grad) g -= k * d;
    }
    ev.f += ksum;
    if (with_grad) {
      g /= h * h;
      ev.grad_shift += g.transpose();
      ev.grad_rot += Vec3(r.row(i).transpose()).cross(g.transpose());
      ev.curv_shift += ksum;
      ev.curv_rot += ksum * r.row(i).squaredNorm();
    }
  }
  ev.curv_shift /= h * h;
  ev.curv_rot /= h * h;
  return ev;
}

// Monotone gradient ascent with a curvature-scaled step and backtracking.
KcState kc_refine(const Matrix& centered_model, const Matrix& target, const Eigen::RowVector3d& center, KcState st,
                  double h, std::size_t max_iter, std::vector<double>* trace) {
  KcEval ev = kc_evaluate(centered_model, target, center, st, h, true);
  if (trace) trace->push_back(ev.f);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vec3 d_rot = ev.grad_rot / std::max(ev.curv_rot, 1e-300);
    const Vec3 d_shift = ev.grad_shift / std::max(ev.curv_shift, 1e-300);
    bool accepted = false;
    double eta = 1.0;
    for (int halvings = 0; halvings < 20; ++halvings, eta *= 0.5) {
      KcState trial = st;
      const Vec3 w = eta * d_rot;
      const double angle = w.norm();
      if (angle > 0.0) {
        // r ← r + w × r, written for row vectors.
        const Eigen::Matrix3d q = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
        trial.rotation = st.rotation * q.transpose();
      }
      trial.shift = st.shift + eta * d_shift;
      const double f = kc_evaluate(centered_model, target, center, trial, h, false).f;
      if (f > ev.f) {
        st = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double previous = ev.f;
    ev = kc_evaluate(centered_model, target, center, st, h, true);
    if (trace) trace->push_back(ev.f);
    if (ev.f - previous <= 1e-12 * std::abs(ev.f)) break;
  }
  return st;
}

}  // namespace

KcAlignResult kc_align(const PointCloud& model, const PointCloud& target, const KcAlignOptions& options) {
  if (model.dim() != 3 || target.dim() != 3) throw Error("kc_align: expected 3D clouds");
  if (model.empty() || target.empty()) throw Error("kc_align: empty cloud");
  const double target_rg = radius_of_gyration(target);
  const double model_rg = radius_of_gyration(model);
  if (!(target_rg > 0.0) || !(model_rg > 0.0)) throw Error("kc_align: degenerate cloud");
  const double h = options.bandwidth > 0.0 ? options.bandwidth : 0.1 * target_rg;
  const double h_coarse = std::max(h, 0.5 * target_rg);
  // Near 0.5·Rg the objective mostly sees second moments, which cannot tell
  // principal-axis flips apart, so the grid is scored at a narrower width.
  const double h_grid = std::max(h, 0.25 * target_rg);

  const Eigen::RowVector3d model_center = model.centroid();
  const Eigen::RowVector3d target_center = target.centroid();
  const Matrix centered = model.coords().rowwise() - model_center;
  const Matrix& tgt = target.coords();

  // The grid and the early annealing stages only need the coarse shape.
  const Matrix centered_sub = strided_rows(centered, 512);
  const Matrix tgt_sub = strided_rows(tgt, 512);

  // Coarse grid with centroid-matched translation.
  const auto grid = rotation_grid(options.grid_size);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const KcState st{grid[g], Vec3::Zero()};
    scored.emplace_back(kc_evaluate(centered_sub, tgt_sub, target_center, st, h_grid, false).f, g);
  }
  const std::size_t keep = std::min(std::max<std::size_t>(options.candidates, 1), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });

  const std::size_t stages = std::max<std::size_t>(options.stages, 1);
  auto stage_width = [&](std::size_t s) {
    const double frac = stages == 1 ? 1.0 : static_cast<double>(s) / static_cast<double>(stages - 1);
    return h_coarse * std::pow(h / h_coarse, frac);
  };
  // Coarse stages on the subsets for every candidate.
  std::vector<std::pair<double, KcState>> refined;
  for (std::size_t c = 0; c < keep; ++c) {
    KcState st{grid[scored[c].second], Vec3::Zero()};
    for (std::size_t s = 0; s + 1 < stages; ++s) {
      st = kc_refine(centered_sub, tgt_sub, target_center, st, stage_width(s), options.max_iterations, nullptr);
    }
    refined.emplace_back(kc_evaluate(centered_sub, tgt_sub, target_center, st, h, false).f, st);
  }
  std::stable_sort(refined.begin(), refined.end(), [](const auto& x, const auto& y) { return x.first > y.first; });

  // Final stage at full resolution for the three best.
  KcAlignResult best;
  best.objective = -1.0;
  KcState best_state{};
  for (std::size_t c = 0; c < std::min<std::size_t>(3, refined.size()); ++c) {
    std::vector<double> trace;
    const KcState st =
        kc_refine(centered, tgt, target_center, refined[c].second, stage_width(stages - 1), options.max_iterations, &trace);
    const double f = kc_evaluate(centered, tgt, target_center, st, h, false).f;
    if (f > best.objective) {
      best.objective = f;
      best.final_stage_trace = std::move(trace);
      best_state = st;
    }
  }

  // q = (p − c_m)·R + c_t + shift  ⇒  p·R + (c_t + shift − c_m·R)
  best.transform.rotation = Rotation(best_state.rotation);
  best.transform.translation =
      (target_center + best_state.shift.transpose() - model_center * best_state.rotation).transpose();
  best.transform.scale = 1.0;
  best.aligned = best.transform.apply(model);
  return best;
}

double rmsd_atomic(const PointCloud& target_atoms, const PointCloud& model) {
  if (target_atoms.empty()) throw Error("rmsd_atomic: no target atoms");
  if (model.empty()) throw Error("rmsd_atomic: empty model");
  if (target_atoms.dim() != model.dim()) throw Error("rmsd_atomic: dimension mismatch");
  const Matrix& a = target_atoms.coords();
  const Matrix& m = model.coords();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m.rows(); ++j) best = std::min(best, (a.row(i) - m.row(j)).squaredNorm());
    sum += best;
  }
  return std::sqrt(sum / static_cast<double>(a.rows()));
}

double rmsd_subsampled(const PointCloud& target, const PointCloud& model) {
  require_same_shape(target, model, "rmsd_subsampled");
  std::vector<double> d2;
  squared_distance_costs(target.coords(), model.coords(), d2);
  const auto n = static_cast<std::size_t>(target.size());
  return std::sqrt(solve_lap(CostView{d2, n, n}).cost / static_cast<double>(n));
}

GenerationReport generation_metrics(const std::vector<PointCloud>& samples, const std::vector<PointCloud>& refs,
                                    std::size_t threads) {
  if (samples.empty() || refs.empty()) throw Error("generation_metrics: empty input");
  std::vector<const PointCloud*> all;
  for (const auto& s : samples) all.push_back(&s);
  for (const auto& r : refs) all.push_back(&r);
  const std::size_t total = all.size();
  const std::size_t ns = samples.size();

  Matrix cd = Matrix::Zero(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(total));
  parallel_for(total, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < total; ++j) {
      cd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = chamfer(*all[i], *all[j]);
    }
  });
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < i; ++j)
      cd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cd(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));

  GenerationReport rep;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < total; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = i;
    for (std::size_t j = 0; j < total; ++j) {
      if (j == i) continue;
      const double d = cd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    if ((arg < ns) == (i < ns)) ++correct;
  }
  rep.one_nna = 100.0 * static_cast<double>(correct) / static_cast<double>(total);

  std::vector<char> covered(refs.size(), 0);
  for (std::size_t s = 0; s < ns; ++s) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const double d = cd(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(ns + r));
      if (d < best) {
        best = d;
        arg = r;
      }
    }
    covered[arg] = 1;
  }
  rep.cov = 100.0 * static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(refs.size());

  double mmd = 0.0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < ns; ++s) best = std::min(best, cd(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(ns + r)));
    mmd += best;
  }
  rep.mmd = mmd / static_cast<double>(refs.size());
  return rep;
}

ModelEvaluation evaluate_model(const PointCloud& model, const PointCloud& atoms,
                               const std::optional<PointCloud>& subsampled_target, const KcAlignOptions& options) {
  const double rg = radius_of_gyration(atoms);
  const PointCloud scaled = gyration_scale(model, rg);
  const double scale = rg / radius_of_gyration(model);

  PointCloud align_target;
  if (subsampled_target) {
    align_target = *subsampled_target;
  } else {
    const Eigen::Index stride = std::max<Eigen::Index>(1, atoms.size() / 2048);
    Matrix sub((atoms.size() + stride - 1) / stride, 3);
    for (Eigen::Index i = 0, k = 0; i < atoms.size(); i += stride, ++k) sub.row(k) = atoms.point(i);
    align_target = PointCloud(std::move(sub));
  }
  KcAlignResult kc = kc_align(scaled, align_target, options);

  ModelEvaluation ev;
  ev.aligned = kc.aligned;
  // scaled = s·(p − c); aligned = scaled·R + τ.
  ev.transform.rotation = kc.transform.rotation;
  ev.transform.scale = scale;
  ev.transform.translation =
      kc.transform.translation - (scale * model.centroid() * kc.transform.rotation.matrix()).transpose();
  ev.rmsd_atomic = rmsd_atomic(atoms, ev.aligned);
  if (subsampled_target && subsampled_target->size() == ev.aligned.size()) {
    ev.rmsd_subsampled = rmsd_subsampled(*subsampled_target, ev.aligned);
  }
  return ev;
}

}  // namespace pointdps
