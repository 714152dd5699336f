#pragma once

#include <optional>
#include <vector>

#include "pointdps/core.hpp"

namespace pointdps {

/// p ↦ scale·(p·R) + translation.
struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Matrix apply(const Matrix& points) const;
  PointCloud apply(const PointCloud& points) const { return PointCloud(apply(points.coords())); }
};

/// Angle of the relative rotation a·bᵀ, in radians.
double geodesic_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// (1/N)[Σ_n min_m ‖x_n − y_m‖ + Σ_m min_n ‖x_n − y_m‖], unsquared distances.
double chamfer(const PointCloud& x, const PointCloud& y);
/// min over bijections of the mean unsquared distance.
double emd(const PointCloud& x, const PointCloud& y);

/// √(mean squared distance to the centroid).
double radius_of_gyration(const PointCloud& cloud);
/// Centers `model` and rescales it to radius of gyration `target_rg`.
PointCloud gyration_scale(const PointCloud& model, double target_rg);

struct KcAlignOptions {
  double bandwidth = 0.0;          // ≤ 0: 0.1 × target radius of gyration
  std::size_t grid_size = 576;     // coarse orientations (multiple of 24)
  std::size_t candidates = 10;     // grid winners refined locally
  std::size_t stages = 4;          // bandwidth annealing stages
  std::size_t max_iterations = 40; // per stage
};

struct KcAlignResult {
  PointCloud aligned;
  RigidTransform transform;
  double objective = 0.0;                 // at the final bandwidth
  std::vector<double> final_stage_trace;  // objective per accepted iterate, last stage of the winner
};

/// Σ_{n,m} exp(−‖a_n − b_m‖²/(2h²)).
double kernel_correlation(const Matrix& a, const Matrix& b, double bandwidth);

/// Proper rigid transform of `model` maximizing its kernel correlation with
/// `target`: an octahedrally symmetrized quaternion grid seeds local gradient
/// ascent under a bandwidth that anneals from coarse to `bandwidth`.
KcAlignResult kc_align(const PointCloud& model, const PointCloud& target, const KcAlignOptions& options = {});

/// Root mean square distance from each target atom to its nearest model point.
double rmsd_atomic(const PointCloud& target_atoms, const PointCloud& model);
/// RMSD under the optimal bijection (squared-distance LAP).
double rmsd_subsampled(const PointCloud& target, const PointCloud& model);

struct GenerationReport {
  double one_nna = 0.0;  // percent
  double cov = 0.0;      // percent
  double mmd = 0.0;
};

/// 1-NNA, COV and MMD under the Chamfer distance.
GenerationReport generation_metrics(const std::vector<PointCloud>& samples, const std::vector<PointCloud>& refs,
                                    std::size_t threads = 1);

struct ModelEvaluation {
  PointCloud aligned;  // scaled and superposed model, Å
  RigidTransform transform;
  double rmsd_atomic = 0.0;
  std::optional<double> rmsd_subsampled;
};

/// Gyration scaling to the atoms, kernel-correlation superposition onto the
/// subsampled target (or onto a strided subset of the atoms when absent),
/// then both RMSD variants.
ModelEvaluation evaluate_model(const PointCloud& model, const PointCloud& atoms,
                               const std::optional<PointCloud>& subsampled_target, const KcAlignOptions& options = {});

}  // namespace pointdps
