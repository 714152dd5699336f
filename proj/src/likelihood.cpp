#include "pointdps/likelihood.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pointdps {

using nlohmann::json;

std::string to_string(ObservationKind kind) {
  switch (kind) {
    case ObservationKind::projection: return "projection";
    case ObservationKind::coarse: return "coarse";
    case ObservationKind::subunit: return "subunit";
  }
  return "unknown";
}

ObservationKind observation_kind_from_string(const std::string& s) {
  if (s == "projection") return ObservationKind::projection;
  if (s == "coarse") return ObservationKind::coarse;
  if (s == "subunit") return ObservationKind::subunit;
  throw Error("unknown observation kind '" + s + "'");
}

void Observation::validate() const {
  if (points.empty()) throw Error(to_string(kind) + " observation has no points");
  if (weight && !(*weight >= 0.0)) throw Error("observation weight must be nonnegative");
  switch (kind) {
    case ObservationKind::projection:
      if (points.dim() != 2) throw Error("projection observation must be 2D");
      if (!rotation) throw Error("projection observation needs a rotation");
      break;
    case ObservationKind::coarse:
    case ObservationKind::subunit:
      if (points.dim() != 3) throw Error(to_string(kind) + " observation must be 3D");
      break;
  }
}

double ObservationSet::weight(std::size_t i) const {
  const auto& w = observations.at(i).weight;
  return w ? *w : 1.0 / static_cast<double>(observations.size());
}

void ObservationSet::bind(std::size_t n) {
  for (std::size_t i = 0; i < observations.size(); ++i) {
    auto& obs = observations[i];
    obs.validate();
    if (obs.kind == ObservationKind::subunit) {
      if (static_cast<std::size_t>(obs.points.size()) > n) {
        throw Error("subunit observation has " + std::to_string(obs.points.size()) + " points but the model has only " +
                    std::to_string(n));
      }
      continue;
    }
    RandomSource rng(obs.upsample_seed.value_or(i), 0x5570);
    obs.upsampler = make_upsampler(static_cast<std::size_t>(obs.points.size()), n, rng);
  }
}

namespace {

void check_model(const Matrix& x) {
  if (x.cols() != 3) throw Error("energy: model cloud must be 3D");
}

const Upsampler& bound_upsampler(const Matrix& x, const Observation& obs) {
  if (!obs.upsampler) throw Error(to_string(obs.kind) + " observation is not bound to a model size");
  if (obs.upsampler->indices.size() != static_cast<std::size_t>(x.rows())) {
    throw Error(to_string(obs.kind) + " observation is bound to " + std::to_string(obs.upsampler->indices.size()) +
                " points, model has " + std::to_string(x.rows()));
  }
  return *obs.upsampler;
}

// Matches `targets` (rows) to `model` (rows) and returns E plus the
// per-model-point residual model_j - target_{σ⁻¹(j)} (zero for free points).
EnergyResult match(const Matrix& targets, const Matrix& model, Matrix& residual) {
  std::vector<double> costs;
  squared_distance_costs(targets, model, costs);
  EnergyResult res;
  res.assignment = solve_lap(CostView{costs, static_cast<std::size_t>(targets.rows()),
                                      static_cast<std::size_t>(model.rows())});
  res.energy = res.assignment.cost;
  residual = Matrix::Zero(model.rows(), model.cols());
  for (std::size_t i = 0; i < res.assignment.row_to_col.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(res.assignment.row_to_col[i]);
    residual.row(j) = model.row(j) - targets.row(static_cast<Eigen::Index>(i));
  }
  return res;
}

}  // namespace

EnergyResult projection_energy(const Matrix& x, const Observation& obs) {
  check_model(x);
  if (obs.kind != ObservationKind::projection) throw Error("projection_energy: wrong observation kind");
  obs.validate();
  const Upsampler& u = bound_upsampler(x, obs);
  const Eigen::Matrix<double, 3, 2> r12 = obs.rotation->matrix().leftCols<2>();
  const Matrix proj = x * r12;
  Matrix residual;
  EnergyResult res = match(apply_upsampler(u, obs.points.coords()), proj, residual);
  res.gradient = 2.0 * residual * r12.transpose();
  return res;
}

EnergyResult coarse_energy(const Matrix& x, const Observation& obs) {
  check_model(x);
  if (obs.kind != ObservationKind::coarse) throw Error("coarse_energy: wrong observation kind");
  obs.validate();
  const Upsampler& u = bound_upsampler(x, obs);
  Matrix residual;
  EnergyResult res = match(apply_upsampler(u, obs.points.coords()), x, residual);
  res.gradient = 2.0 * residual;
  return res;
}

EnergyResult subunit_energy(const Matrix& x, const Observation& obs) {
  check_model(x);
  if (obs.kind != ObservationKind::subunit) throw Error("subunit_energy: wrong observation kind");
  obs.validate();
  if (obs.points.size() > x.rows()) {
    throw Error("subunit_energy: subunit has more points (" + std::to_string(obs.points.size()) + ") than the model (" +
                std::to_string(x.rows()) + ")");
  }
  Matrix residual;
  EnergyResult res = match(obs.points.coords(), x, residual);
  res.gradient = 2.0 * residual;
  return res;
}

EnergyResult observation_energy(const Matrix& x, const Observation& obs) {
  switch (obs.kind) {
    case ObservationKind::projection: return projection_energy(x, obs);
    case ObservationKind::coarse: return coarse_energy(x, obs);
    case ObservationKind::subunit: return subunit_energy(x, obs);
  }
  throw Error("unknown observation kind");
}

CombinedEnergy combined_energy(const Matrix& x, const ObservationSet& set) {
  check_model(x);
  CombinedEnergy out;
  out.gradient = Matrix::Zero(x.rows(), 3);
  out.per_observation.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const EnergyResult e = observation_energy(x, set.observations[i]);
    const double w = set.weight(i);
    out.energy += w * e.energy;
    out.gradient += w * e.gradient;
    out.per_observation.push_back(e.energy);
  }
  return out;
}

namespace {

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix rows_matrix(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty()) throw Error(what + ": expected a nonempty array of points");
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || rows[i].size() != cols) throw Error(what + ": ragged point array");
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
    }
  }
  return m;
}

}  // namespace

std::string observations_to_json(const ObservationSet& set) {
  json obs = json::array();
  for (const auto& o : set.observations) {
    json j;
    j["kind"] = to_string(o.kind);
    j["points"] = matrix_rows(o.points.coords());
    if (o.rotation) {
      Matrix r = o.rotation->matrix();
      j["rotation"] = matrix_rows(r);
    }
    j["weight"] = o.weight ? json(*o.weight) : json(nullptr);
    j["upsample_seed"] = o.upsample_seed ? json(*o.upsample_seed) : json(nullptr);
    obs.push_back(std::move(j));
  }
  json root;
  root["observations"] = std::move(obs);
  return root.dump(1) + "\n";
}

ObservationSet observations_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("observation file: ") + e.what());
  }
  if (!root.contains("observations") || !root["observations"].is_array()) {
    throw Error("observation file: missing \"observations\" array");
  }
  ObservationSet set;
  try {
    for (const auto& j : root["observations"]) {
      Observation o;
      o.kind = observation_kind_from_string(j.at("kind").get<std::string>());
      o.points = PointCloud(rows_matrix(j.at("points"), "points"));
      if (j.contains("rotation") && !j["rotation"].is_null()) {
        Matrix r = rows_matrix(j["rotation"], "rotation");
        if (r.rows() != 3 || r.cols() != 3) throw Error("rotation must be 3×3");
        o.rotation = Rotation(Eigen::Matrix3d(r));
      }
      if (j.contains("weight") && !j["weight"].is_null()) o.weight = j["weight"].get<double>();
      if (j.contains("upsample_seed") && !j["upsample_seed"].is_null()) {
        o.upsample_seed = j["upsample_seed"].get<std::uint64_t>();
      }
      o.validate();
      set.observations.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("observation file: ") + e.what());
  }
  return set;
}

ObservationSet read_observations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return observations_from_json(ss.str());
}

void write_observations(const std::filesystem::path& path, const ObservationSet& set) {
  write_file_atomic(path, observations_to_json(set));
}

}  // namespace pointdps
