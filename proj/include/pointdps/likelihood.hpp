#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pointdps/assignment.hpp"
#include "pointdps/core.hpp"

namespace pointdps {

enum class ObservationKind { projection, coarse, subunit };

std::string to_string(ObservationKind kind);
ObservationKind observation_kind_from_string(const std::string& s);

/// One measurement of the unknown cloud x (N×3).
///
/// Projection: 2D points observed under `rotation`. Coarse: a 3D
/// low-resolution version. Subunit: L ≤ N points known to be part of x.
/// Projection and coarse kinds need an upsampler of output size N before
/// their energy can be evaluated; it is drawn once from `upsample_seed` by
/// bind() and then stays fixed.
struct Observation {
  ObservationKind kind = ObservationKind::coarse;
  PointCloud points;
  std::optional<Rotation> rotation;
  std::optional<double> weight;
  std::optional<std::uint64_t> upsample_seed;
  std::optional<Upsampler> upsampler;

  /// Throws Error when kind, dimension and rotation are inconsistent.
  void validate() const;
};

struct ObservationSet {
  std::vector<Observation> observations;

  bool empty() const { return observations.empty(); }
  std::size_t size() const { return observations.size(); }

  /// Effective weight of observation i: its own weight or 1/|observations|.
  double weight(std::size_t i) const;

  /// Draws frozen upsamplers for model size n. Observations without an
  /// upsample_seed use their index as seed.
  void bind(std::size_t n);
};

struct EnergyResult {
  double energy = 0.0;
  Assignment assignment;  // rows: (upsampled) observation points, cols: x points
  Matrix gradient;        // N×3, ∂E/∂x under the frozen assignment
};

EnergyResult projection_energy(const Matrix& x, const Observation& obs);
EnergyResult coarse_energy(const Matrix& x, const Observation& obs);
EnergyResult subunit_energy(const Matrix& x, const Observation& obs);
EnergyResult observation_energy(const Matrix& x, const Observation& obs);

struct CombinedEnergy {
  double energy = 0.0;
  Matrix gradient;
  std::vector<double> per_observation;  // unweighted E_i
};

/// Σ w_i E_i(x) and its gradient. Each E_i uses its own optimal assignment.
CombinedEnergy combined_energy(const Matrix& x, const ObservationSet& obs);

inline EnergyResult projection_energy(const PointCloud& x, const Observation& obs) {
  return projection_energy(x.coords(), obs);
}
inline EnergyResult coarse_energy(const PointCloud& x, const Observation& obs) {
  return coarse_energy(x.coords(), obs);
}
inline EnergyResult subunit_energy(const PointCloud& x, const Observation& obs) {
  return subunit_energy(x.coords(), obs);
}
inline CombinedEnergy combined_energy(const PointCloud& x, const ObservationSet& obs) {
  return combined_energy(x.coords(), obs);
}

// JSON observation files:
// { "observations": [ { "kind", "points", "rotation"?, "weight"?, "upsample_seed"? } ] }
std::string observations_to_json(const ObservationSet& set);
ObservationSet observations_from_json(const std::string& text);
ObservationSet read_observations(const std::filesystem::path& path);
void write_observations(const std::filesystem::path& path, const ObservationSet& set);

}  // namespace pointdps
