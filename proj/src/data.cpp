#include "pointdps/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace pointdps {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// 1-based inclusive column range, clipped to the line.
std::string_view columns(std::string_view line, std::size_t first, std::size_t last) {
  if (line.size() < first) return {};
  return line.substr(first - 1, std::min(last, line.size()) - first + 1);
}

double parse_coordinate(std::string_view line, std::size_t first, std::size_t last, std::size_t lineno) {
  const std::string_view field = trim(columns(line, first, last));
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw Error("pdb: malformed coordinate on line " + std::to_string(lineno));
  }
  return v;
}

bool is_water(std::string_view res) {
  return res == "HOH" || res == "WAT" || res == "DOD" || res == "H2O";
}

}  // namespace

std::vector<AtomRecord> parse_pdb(std::string_view text) {
  std::vector<AtomRecord> atoms;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);

    const std::string_view record = trim(columns(line, 1, 6));
    if (record == "ENDMDL") break;
    const bool is_atom = record == "ATOM";
    const bool is_het = record == "HETATM";
    if (!is_atom && !is_het) continue;

    const std::string_view altloc = columns(line, 17, 17);
    if (!altloc.empty() && altloc[0] != ' ' && altloc[0] != 'A') continue;
    if (is_het && is_water(trim(columns(line, 18, 20)))) continue;

    std::string element(trim(columns(line, 77, 78)));
    if (element.empty()) {
      for (char c : columns(line, 13, 16)) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
          element = std::string(1, c);
          break;
        }
      }
    }
    for (char& c : element) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (element.empty() || element == "H" || element == "D") continue;

    AtomRecord a;
    a.element = std::move(element);
    a.kind = is_het ? RecordKind::hetatm : RecordKind::atom;
    a.position = Vec3(parse_coordinate(line, 31, 38, lineno), parse_coordinate(line, 39, 46, lineno),
                      parse_coordinate(line, 47, 54, lineno));
    atoms.push_back(std::move(a));
  }
  if (atoms.empty()) throw Error("pdb: no heavy atoms");
  return atoms;
}

std::vector<AtomRecord> read_pdb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pdb(ss.str());
}

PointCloud atom_cloud(const std::vector<AtomRecord>& atoms) {
  Matrix m(static_cast<Eigen::Index>(atoms.size()), 3);
  for (std::size_t i = 0; i < atoms.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = atoms[i].position.transpose();
  return PointCloud(std::move(m));
}

KMeansResult kmeans(const PointCloud& points, std::size_t k, RandomSource& rng, std::size_t max_iter) {
  const Matrix& x = points.coords();
  const auto n = static_cast<std::size_t>(x.rows());
  if (k == 0) throw Error("kmeans: k must be positive");
  if (k > n) throw Error("kmeans: more clusters (" + std::to_string(k) + ") than points (" + std::to_string(n) + ")");

  KMeansResult res;
  res.centers = Matrix(static_cast<Eigen::Index>(k), x.cols());
  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    res.centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - res.centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = rng.index(n);
      continue;
    }
    double u = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      u -= d2[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
  }

  res.labels.assign(n, 0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (x.row(static_cast<Eigen::Index>(i)) - res.centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (arg != res.labels[i]) changed = true;
      res.labels[i] = arg;
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(res.labels[i])) += x.row(static_cast<Eigen::Index>(i));
      ++counts[res.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) res.centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    }
  }
  return res;
}

namespace {

struct EStep {
  Matrix resp;  // N×K
  double mean_log_likelihood = 0.0;
};

EStep gmm_estep(const Matrix& x, const Matrix& means, const Eigen::Matrix3d& cov, const std::vector<double>& weights) {
  const Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success) throw Error("fit_gmm: covariance is not positive definite");
  const Eigen::Matrix3d l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double log_norm = -0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + log_det);
  const Eigen::Index n = x.rows(), k = means.rows();

  EStep e;
  e.resp.resize(n, k);
  std::vector<double> log_w(weights.size());
  for (std::size_t c = 0; c < weights.size(); ++c) {
    log_w[c] = weights[c] > 0.0 ? std::log(weights[c]) : -std::numeric_limits<double>::infinity();
  }
  // Whitened coordinates make the Mahalanobis term a plain squared norm.
  const Matrix xw = llt.matrixL().solve(x.transpose()).transpose();
  const Matrix mw = llt.matrixL().solve(means.transpose()).transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      const double v = log_w[static_cast<std::size_t>(c)] + log_norm - 0.5 * (xw.row(i) - mw.row(c)).squaredNorm();
      e.resp(i, c) = v;
      best = std::max(best, v);
    }
    double s = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      e.resp(i, c) = std::exp(e.resp(i, c) - best);
      s += e.resp(i, c);
    }
    e.resp.row(i) /= s;
    total += best + std::log(s);
  }
  e.mean_log_likelihood = total / static_cast<double>(n);
  return e;
}

void gmm_mstep(const Matrix& x, const Matrix& resp, GmmModel& model) {
  const Eigen::Index n = x.rows(), k = resp.cols();
  const Eigen::RowVectorXd nk = resp.colwise().sum();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (Eigen::Index c = 0; c < k; ++c) {
    model.weights[static_cast<std::size_t>(c)] = nk(c) / static_cast<double>(n);
    if (nk(c) > 1e-12) model.means.row(c) = (resp.col(c).transpose() * x) / nk(c);
    const Matrix d = x.rowwise() - model.means.row(c);
    cov += d.transpose() * resp.col(c).asDiagonal() * d;
  }
  cov /= static_cast<double>(n);
  cov += (1e-6 * cov.trace() / 3.0) * Eigen::Matrix3d::Identity();
  model.covariance = 0.5 * (cov + cov.transpose());
}

}  // namespace

GmmModel fit_gmm(const PointCloud& points, std::size_t k, RandomSource& rng, std::size_t max_iter, double tol) {
  if (points.dim() != 3) throw Error("fit_gmm: expected a 3D cloud");
  if (k == 0) throw Error("fit_gmm: k must be positive");
  if (k > static_cast<std::size_t>(points.size())) {
    throw Error("fit_gmm: more components (" + std::to_string(k) + ") than points (" + std::to_string(points.size()) + ")");
  }
  const Matrix& x = points.coords();
  const KMeansResult init = kmeans(points, k, rng);

  GmmModel model;
  model.means = init.centers;
  model.weights.assign(k, 0.0);
  Matrix resp = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < init.labels.size(); ++i) resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(init.labels[i])) = 1.0;
  gmm_mstep(x, resp, model);
  if (!(model.covariance.trace() > 0.0)) throw Error("fit_gmm: degenerate point set");

  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iter; ++it) {
    const EStep e = gmm_estep(x, model.means, model.covariance, model.weights);
    model.log_likelihood_trace.push_back(e.mean_log_likelihood);
    if (e.mean_log_likelihood - previous < tol) break;
    previous = e.mean_log_likelihood;
    gmm_mstep(x, e.resp, model);
  }
  return model;
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::chair: return "chair";
    case SynthKind::blobs: return "blobs";
    case SynthKind::helix: return "helix";
    case SynthKind::lshape: return "lshape";
    case SynthKind::mixture: return "mixture";
  }
  return "unknown";
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "chair") return SynthKind::chair;
  if (s == "blobs") return SynthKind::blobs;
  if (s == "helix") return SynthKind::helix;
  if (s == "lshape") return SynthKind::lshape;
  if (s == "mixture") return SynthKind::mixture;
  throw Error("unknown synthetic dataset kind '" + s + "'");
}

namespace {

struct Box {
  Vec3 lo, hi;
  double area() const {
    const Vec3 e = hi - lo;
    return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  }
};

// Uniform point on the surface of an axis-aligned box.
Vec3 box_surface_point(const Box& b, RandomSource& rng) {
  const Vec3 e = b.hi - b.lo;
  const double faces[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
  double u = rng.uniform() * (faces[0] + faces[1] + faces[2]);
  int axis = 2;
  for (int a = 0; a < 3; ++a) {
    if (u < faces[a]) {
      axis = a;
      break;
    }
    u -= faces[a];
  }
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = b.lo[a] + rng.uniform() * e[a];
  p[axis] = rng.uniform() < 0.5 ? b.lo[axis] : b.hi[axis];
  return p;
}

Matrix sample_boxes(const std::vector<Box>& boxes, std::size_t n, RandomSource& rng) {
  double total = 0.0;
  for (const auto& b : boxes) total += b.area();
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t pick = boxes.size() - 1;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      if (u < boxes[b].area()) {
        pick = b;
        break;
      }
      u -= boxes[b].area();
    }
    out.row(static_cast<Eigen::Index>(i)) = box_surface_point(boxes[pick], rng).transpose();
  }
  return out;
}

Matrix make_chair(std::size_t n, RandomSource& rng) {
  const double w = rng.uniform(0.8, 1.2), d = rng.uniform(0.8, 1.2);
  const double seat_h = rng.uniform(0.8, 1.1), seat_t = rng.uniform(0.08, 0.15);
  const double back_h = rng.uniform(0.7, 1.2), back_t = rng.uniform(0.08, 0.15);
  const double leg = rng.uniform(0.06, 0.12);
  std::vector<Box> boxes;
  boxes.push_back({Vec3(0, 0, seat_h), Vec3(w, d, seat_h + seat_t)});
  boxes.push_back({Vec3(0, d - back_t, seat_h + seat_t), Vec3(w, d, seat_h + seat_t + back_h)});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double x0 = i ? w - leg : 0.0, y0 = j ? d - leg : 0.0;
      boxes.push_back({Vec3(x0, y0, 0.0), Vec3(x0 + leg, y0 + leg, seat_h)});
    }
  }
  return sample_boxes(boxes, n, rng);
}

Matrix make_lshape(std::size_t n, RandomSource& rng) {
  const double a = rng.uniform(1.0, 1.6), b = rng.uniform(0.7, 1.3), t = rng.uniform(0.15, 0.35);
  const std::vector<Box> boxes = {{Vec3(0, 0, 0), Vec3(a, t, t)}, {Vec3(0, 0, 0), Vec3(t, b, t)}};
  return sample_boxes(boxes, n, rng);
}

Matrix make_helix(std::size_t n, RandomSource& rng) {
  const double radius = rng.uniform(0.3, 0.6), turns = rng.uniform(1.5, 3.5), height = rng.uniform(1.0, 2.0);
  const double noise = rng.uniform(0.02, 0.06);
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.uniform();
    const double phi = 2.0 * std::numbers::pi * turns * s;
    out.row(static_cast<Eigen::Index>(i)) << radius * std::cos(phi) + noise * rng.normal(),
        radius * std::sin(phi) + noise * rng.normal(), height * s + noise * rng.normal();
  }
  return out;
}

Matrix make_blobs(std::size_t n, RandomSource& rng) {
  const std::size_t lobes = 2 + rng.index(3);
  std::vector<Vec3> centers;
  std::vector<Eigen::Matrix3d> shapes;
  std::vector<double> weights;
  double total = 0.0;
  for (std::size_t l = 0; l < lobes; ++l) {
    centers.emplace_back(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6));
    const Eigen::Matrix3d rot = random_orthogonal(rng, true).matrix();
    const Vec3 scales(rng.uniform(0.08, 0.25), rng.uniform(0.08, 0.25), rng.uniform(0.08, 0.25));
    shapes.push_back(scales.asDiagonal() * rot);
    weights.push_back(rng.uniform(0.5, 1.5));
    total += weights.back();
  }
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t pick = lobes - 1;
    for (std::size_t l = 0; l < lobes; ++l) {
      if (u < weights[l]) {
        pick = l;
        break;
      }
      u -= weights[l];
    }
    const Eigen::RowVector3d z(rng.normal(), rng.normal(), rng.normal());
    out.row(static_cast<Eigen::Index>(i)) = z * shapes[pick] + centers[pick].transpose();
  }
  return out;
}

}  // namespace

const BlobMixture& fixed_blob_mixture() {
  static const BlobMixture mix{
      Matrix{{0.5, 0.0, 0.0}, {-0.25, 0.433, 0.0}, {-0.25, -0.433, 0.2}, {0.0, 0.1, -0.5}}, {0.25, 0.25, 0.25, 0.25}, 0.1};
  return mix;
}

namespace {

Matrix sample_mixture(const BlobMixture& mix, std::size_t n, RandomSource& rng) {
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < mix.weights.size() && u >= mix.weights[k]) u -= mix.weights[k++];
    for (Eigen::Index d = 0; d < 3; ++d) out(i, d) = mix.means(static_cast<Eigen::Index>(k), d) + mix.scale * rng.normal();
  }
  return out;
}

}  // namespace

std::vector<PointCloud> synth_dataset(SynthKind kind, std::size_t count, std::size_t n_points, const RandomSource& rng) {
  if (n_points < 2) throw Error("synth_dataset: need at least 2 points per cloud");
  std::vector<PointCloud> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RandomSource r = rng.split(i);
    Matrix m;
    switch (kind) {
      case SynthKind::chair: m = make_chair(n_points, r); break;
      case SynthKind::blobs: m = make_blobs(n_points, r); break;
      case SynthKind::helix: m = make_helix(n_points, r); break;
      case SynthKind::lshape: m = make_lshape(n_points, r); break;
      case SynthKind::mixture: out.emplace_back(sample_mixture(fixed_blob_mixture(), n_points, r)); continue;
    }
    out.push_back(center_and_scale(PointCloud(std::move(m))));
  }
  return out;
}

ObservationSet simulate_observations(const PointCloud& cloud, const SimulationSpec& spec, RandomSource& rng) {
  if (cloud.dim() != 3) throw Error("simulate_observations: expected a 3D cloud");
  const auto n = static_cast<std::size_t>(cloud.size());
  ObservationSet set;

  if (spec.projections > 0) {
    if (spec.points_per_projection == 0) throw Error("simulate_observations: points per projection must be positive");
    if (spec.points_per_projection > n) {
      throw Error("simulate_observations: requested " + std::to_string(spec.points_per_projection) +
                  " points per projection from a cloud of " + std::to_string(n));
    }
  }
  for (std::size_t p = 0; p < spec.projections; ++p) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < spec.points_per_projection; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    Matrix sub(static_cast<Eigen::Index>(spec.points_per_projection), 3);
    for (std::size_t i = 0; i < spec.points_per_projection; ++i) sub.row(static_cast<Eigen::Index>(i)) = cloud.point(static_cast<Eigen::Index>(idx[i]));
    Observation o;
    o.kind = ObservationKind::projection;
    o.rotation = random_orthogonal(rng, false);
    o.points = project(PointCloud(std::move(sub)), *o.rotation);
    o.upsample_seed = rng() >> 11;
    set.observations.push_back(std::move(o));
  }

  if (spec.coarse_points) {
    const GmmModel gmm = fit_gmm(cloud, *spec.coarse_points, rng);
    Observation o;
    o.kind = ObservationKind::coarse;
    o.points = PointCloud(gmm.means);
    o.upsample_seed = rng() >> 11;
    set.observations.push_back(std::move(o));
  }

  if (spec.subunit_points) {
    if (*spec.subunit_points == 0 || *spec.subunit_points > n) {
      throw Error("simulate_observations: subunit size must be in [1, " + std::to_string(n) + "]");
    }
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(n) / static_cast<double>(*spec.subunit_points))));
    const KMeansResult km = kmeans(cloud, k, rng);
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : km.labels) ++sizes[l];
    std::vector<std::size_t> nonempty;
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) nonempty.push_back(c);
    }
    const std::size_t chosen = nonempty[rng.index(nonempty.size())];
    Matrix pts(static_cast<Eigen::Index>(sizes[chosen]), 3);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (km.labels[i] == chosen) pts.row(row++) = cloud.point(static_cast<Eigen::Index>(i));
    }
    Observation o;
    o.kind = ObservationKind::subunit;
    o.points = PointCloud(std::move(pts));
    set.observations.push_back(std::move(o));
  }
  return set;
}

}  // namespace pointdps
