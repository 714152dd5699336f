#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pointdps/core.hpp"
#include "pointdps/likelihood.hpp"
#include "pointdps/random.hpp"

namespace pointdps {

enum class RecordKind { atom, hetatm };

struct AtomRecord {
  std::string element;  // upper case
  Vec3 position;        // Å
  RecordKind kind = RecordKind::atom;
};

/// Heavy atoms of the first model of a fixed-column PDB file.
///
/// Keeps ATOM records and non-water HETATM records, drops hydrogen and
/// deuterium, keeps only blank or 'A' alternate locations, and stops at the
/// first ENDMDL. Throws Error on a malformed coordinate field (with the line
/// number) or when no heavy atom remains.
std::vector<AtomRecord> parse_pdb(std::string_view text);
std::vector<AtomRecord> read_pdb(const std::filesystem::path& path);
PointCloud atom_cloud(const std::vector<AtomRecord>& atoms);

struct KMeansResult {
  Matrix centers;                   // k×D
  std::vector<std::size_t> labels;  // one per point
};

/// k-means++ seeding followed by Lloyd iterations.
KMeansResult kmeans(const PointCloud& points, std::size_t k, RandomSource& rng, std::size_t max_iter = 100);

/// Gaussian mixture with one full covariance shared by all components.
struct GmmModel {
  Matrix means;                 // K×3
  Eigen::Matrix3d covariance;
  std::vector<double> weights;  // sum to 1
  std::vector<double> log_likelihood_trace;  // mean per-point log-likelihood per EM iteration
};

/// EM for a tied-covariance mixture, seeded by k-means++ / Lloyd. Stops when
/// the mean log-likelihood gains less than `tol` or after `max_iter` rounds.
/// 1e-6·trace/3 is added to the covariance diagonal at every M-step.
GmmModel fit_gmm(const PointCloud& points, std::size_t k, RandomSource& rng, std::size_t max_iter = 200,
                 double tol = 1e-6);

enum class SynthKind { chair, blobs, helix, lshape, mixture };

/// Isotropic Gaussian mixture Σ w_k N(μ_k, s²I).
struct BlobMixture {
  Matrix means;  // K×3
  std::vector<double> weights;
  double scale = 0.1;
};

/// The fixed four-blob layout sampled by SynthKind::mixture.
const BlobMixture& fixed_blob_mixture();

std::string to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& s);

/// Desk-scale training shapes, each centered and scaled into [−1, 1]³.
/// `mixture` clouds are i.i.d. draws from fixed_blob_mixture() and are left
/// unnormalized, so its exact denoiser is known. Cloud i depends only on (rng, i).
std::vector<PointCloud> synth_dataset(SynthKind kind, std::size_t count, std::size_t n_points, const RandomSource& rng);

struct SimulationSpec {
  std::size_t projections = 0;
  std::size_t points_per_projection = 0;
  std::optional<std::size_t> coarse_points;
  std::optional<std::size_t> subunit_points;  // requested mean cluster size
};

/// Projections (random subsample, random orthogonal transform, drop z),
/// an optional coarse-grained cloud (tied GMM means) and an optional subunit
/// (one random k-means cluster with k = round(N / subunit_points)).
ObservationSet simulate_observations(const PointCloud& cloud, const SimulationSpec& spec, RandomSource& rng);

}  // namespace pointdps
