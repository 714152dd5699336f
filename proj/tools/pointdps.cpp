// pointdps command-line interface.
//
// Every subcommand writes its data outputs plus a JSON manifest (command,
// configuration, seed, NFE, output paths, wall time). Exit status is 0 on
// success, 2 on usage errors and 1 on runtime failures.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pointdps/assignment.hpp"
#include "pointdps/core.hpp"
#include "pointdps/data.hpp"
#include "pointdps/diffusion.hpp"
#include "pointdps/eval.hpp"
#include "pointdps/likelihood.hpp"
#include "pointdps/network.hpp"
#include "pointdps/parallel.hpp"
#include "pointdps/random.hpp"
#include "pointdps/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointdps;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t resolve_threads(int flag) {
  if (flag > 0) return static_cast<std::size_t>(flag);
  if (const char* env = std::getenv("POINTDPS_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("POINTDPS_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["seed"] = seed;
    doc_["config"] = json::object();
    doc_["outputs"] = json::array();
  }
  json& config() { return doc_["config"]; }
  json& operator[](const char* key) { return doc_[key]; }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }

  void write(const fs::path& path) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["timing"] = {{"wall_seconds", secs}};
    write_file_atomic(path, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

std::string indexed_name(const std::string& stem, std::size_t i) {
  std::ostringstream os;
  os << stem << '_' << std::setw(3) << std::setfill('0') << i << ".xyz";
  return os.str();
}

std::vector<fs::path> write_clouds(const fs::path& dir, const std::vector<Matrix>& clouds, const std::string& stem) {
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const fs::path p = dir / indexed_name(stem, i);
    write_xyz(p, PointCloud(clouds[i]));
    paths.push_back(p);
  }
  return paths;
}

std::vector<PointCloud> load_dataset(const std::string& spec, std::size_t count, std::size_t points,
                                     std::uint64_t seed) {
  if (spec.rfind("synth:", 0) == 0) {
    SynthKind kind;
    try {
      kind = synth_kind_from_string(spec.substr(6));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return synth_dataset(kind, count, points, RandomSource(seed, 0xda7a));
  }
  const fs::path dir(spec);
  if (!fs::is_directory(dir)) throw UsageError("--dataset must be synth:<kind> or a directory of .xyz files");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xyz") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .xyz files in " + dir.string());
  std::vector<PointCloud> out;
  for (const auto& f : files) out.push_back(read_xyz(f));
  for (const auto& c : out) {
    if (c.size() != out.front().size()) throw Error("dataset clouds must all have the same number of points");
  }
  return out;
}

std::vector<PointCloud> read_cloud_list(const std::vector<std::string>& files) {
  std::vector<PointCloud> out;
  for (const auto& f : files) out.push_back(read_xyz(f));
  return out;
}

BetaRule parse_beta(const std::string& text) {
  try {
    return BetaRule::parse(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// Number of generated points: explicit flag or the largest observation.
std::size_t resolve_points(int flag, const ObservationSet& obs) {
  if (flag > 0) return static_cast<std::size_t>(flag);
  std::size_t n = 0;
  for (const auto& o : obs.observations) n = std::max(n, static_cast<std::size_t>(o.points.size()));
  if (n == 0) throw UsageError("--points is required when no observations are given");
  return n;
}

void check_subunits(const ObservationSet& obs, std::size_t n) {
  for (const auto& o : obs.observations) {
    if (o.kind == ObservationKind::subunit && static_cast<std::size_t>(o.points.size()) > n) {
      throw Error("subunit observation has " + std::to_string(o.points.size()) + " points but only " +
                  std::to_string(n) + " points are generated");
    }
  }
}

Schedule make_schedule(int steps, double rho, double t_max, double t_min, const std::string& beta, bool correction) {
  if (steps < 1) throw UsageError("--steps must be at least 1");
  DiffusionConfig cfg;
  cfg.rho = rho;
  cfg.t_max = t_max;
  cfg.t_min = t_min;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  Schedule s;
  s.timesteps = timesteps(static_cast<std::size_t>(steps), cfg);
  s.beta = parse_beta(beta);
  s.correction = correction;
  return s;
}

json schedule_json(const Schedule& s, double rho) {
  return {{"steps", s.steps()},
          {"rho", rho},
          {"t_max", s.timesteps.front()},
          {"t_min", s.timesteps[s.timesteps.size() - 2]},
          {"beta", s.beta.str()},
          {"correction", s.correction}};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  int count = 256, points = 64, epochs = 50, batch = 16, hidden = 64, layers = 2, embed = 16;
  double lr = 1e-3;
  std::string augment = "orthogonal";
  std::string schedule = "two-phase";
  std::uint64_t seed = 0;
  std::string out;
};

int run_train(const TrainArgs& a) {
  if (a.epochs < 1 || a.batch < 1 || a.count < 1 || a.points < 2) throw UsageError("train: sizes must be positive");
  Manifest m("train", a.seed);
  const std::vector<PointCloud> data =
      load_dataset(a.dataset, static_cast<std::size_t>(a.count), static_cast<std::size_t>(a.points), a.seed);

  NetArch arch;
  arch.hidden = a.hidden;
  arch.layers = a.layers;
  arch.embed_dim = a.embed;
  try {
    arch.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  TrainOptions opt;
  try {
    opt.augmentation = augmentation_from_string(a.augment);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  TrainPhase base;
  base.batch_size = a.batch;
  base.lr = a.lr;
  if (a.schedule == "two-phase") {
    // Most epochs at the small noise levels guided sampling uses, then a
    // short pass over the full range for unconditional generation.
    const int late = std::max(1, a.epochs / 10);
    TrainPhase p1 = base, p2 = base;
    p1.epochs = a.epochs - late;
    p1.p_mean = -2.8;
    p1.p_std = 0.9;
    p1.t_max = 1.0;
    p2.epochs = late;
    if (p1.epochs > 0) opt.phases.push_back(p1);
    opt.phases.push_back(p2);
  } else if (a.schedule == "edm") {
    base.epochs = a.epochs;
    opt.phases.push_back(base);
  } else {
    throw UsageError("--schedule must be two-phase or edm");
  }

  DiffusionConfig cfg;
  RandomSource init(a.seed, 0x1417);
  NetDenoiser net(arch, cfg.c_noise_scale, init);
  RandomSource rng(a.seed, 0x7a11);
  const TrainLog log = train(net, data, cfg, opt, rng);

  json phases = json::array();
  for (const auto& p : opt.phases) {
    phases.push_back({{"epochs", p.epochs}, {"batch_size", p.batch_size}, {"lr", p.lr},
                      {"p_mean", p.p_mean}, {"p_std", p.p_std}, {"t_max", p.t_max}});
  }
  const json meta = {{"dataset", a.dataset}, {"clouds", data.size()}, {"points", data.front().size()},
                     {"augmentation", a.augment}, {"phases", phases}, {"seed", a.seed},
                     {"final_loss", log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()}};
  write_model(a.out, net, meta);

  m.config() = meta;
  m.config()["arch"] = {{"hidden", arch.hidden}, {"layers", arch.layers}, {"embed_dim", arch.embed_dim}};
  m["epoch_loss"] = log.epoch_loss;
  m["optimizer_steps"] = log.steps;
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct SimulateArgs {
  std::string cloud, pdb;
  int projections = 0, points = 0, coarse = 0, subunit = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  if (a.cloud.empty() == a.pdb.empty()) throw UsageError("simulate: give exactly one of --cloud or --pdb");
  if (a.projections > 0 && a.points <= 0) throw UsageError("simulate: --points is required with --projections");
  if (a.projections == 0 && a.coarse == 0 && a.subunit == 0) throw UsageError("simulate: nothing to simulate");
  Manifest m("simulate", a.seed);
  const PointCloud cloud = a.cloud.empty() ? center_and_scale(atom_cloud(read_pdb(a.pdb))) : read_xyz(a.cloud);

  SimulationSpec spec;
  spec.projections = static_cast<std::size_t>(std::max(0, a.projections));
  spec.points_per_projection = static_cast<std::size_t>(std::max(0, a.points));
  if (a.coarse > 0) spec.coarse_points = static_cast<std::size_t>(a.coarse);
  if (a.subunit > 0) spec.subunit_points = static_cast<std::size_t>(a.subunit);
  RandomSource rng(a.seed, 0x5137);
  const ObservationSet obs = simulate_observations(cloud, spec, rng);
  write_observations(a.out, obs);

  m.config() = {{"input", a.cloud.empty() ? a.pdb : a.cloud}, {"projections", a.projections},
                {"points_per_projection", a.points}, {"coarse", a.coarse}, {"subunit", a.subunit}};
  m["observations"] = obs.size();
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct SamplingArgs {
  std::string model, obs;
  int samples = 10, steps = 40, points = 0, threads = 0;
  double rho = 3.0, tmax = 1.0, tmin = 0.002, alpha = 100.0;
  std::string beta = "1/t";
  bool no_correction = false;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int run_reconstruct(const SamplingArgs& a, const std::string& command, bool guided) {
  if (a.samples < 1) throw UsageError("--samples must be positive");
  if (a.alpha < 0.0) throw UsageError("--alpha must be nonnegative");
  Manifest m(command, a.seed);
  const NetDenoiser net = read_model(a.model);
  ObservationSet obs;
  if (guided) obs = read_observations(a.obs);
  const std::size_t n = guided ? resolve_points(a.points, obs)
                               : static_cast<std::size_t>(a.points > 0 ? a.points : 64);
  check_subunits(obs, n);
  obs.bind(n);
  const Schedule sched = make_schedule(a.steps, a.rho, a.tmax, a.tmin, a.beta, !a.no_correction);

  GuidedScore score({&net, guided ? &obs : nullptr, guided ? a.alpha : 0.0});
  const std::size_t threads = resolve_threads(a.threads);
  const auto results = sample_batch(score, sched, n, static_cast<std::size_t>(a.samples),
                                    RandomSource(a.seed, 0x5a3e), threads);

  std::vector<Matrix> clouds;
  json nfe = json::array(), energy = json::array();
  for (const auto& r : results) {
    clouds.push_back(r.x);
    nfe.push_back(r.nfe);
    if (guided) energy.push_back(combined_energy(r.x, obs).energy);
  }
  const auto paths = write_clouds(a.out_dir, clouds, "sample");

  m.config() = schedule_json(sched, a.rho);
  m.config()["model"] = a.model;
  m.config()["points"] = n;
  m.config()["samples"] = a.samples;
  m.config()["threads"] = threads;
  if (guided) {
    m.config()["observations"] = a.obs;
    m.config()["alpha"] = a.alpha;
    m["final_energy"] = energy;
  }
  m["nfe"] = results.front().nfe;
  m["nfe_per_sample"] = nfe;
  for (const auto& p : paths) m.output(p);
  m.write(fs::path(a.out_dir) / "manifest.json");
  return 0;
}

struct MlArgs {
  std::string obs;
  int samples = 10, steps = 100, points = 0, threads = 0;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int run_ml(const MlArgs& a) {
  if (a.samples < 1 || a.steps < 0 || !(a.lr > 0.0)) throw UsageError("ml: invalid --samples, --steps or --lr");
  Manifest m("ml", a.seed);
  ObservationSet obs = read_observations(a.obs);
  const std::size_t n = resolve_points(a.points, obs);
  check_subunits(obs, n);
  obs.bind(n);
  const std::size_t threads = resolve_threads(a.threads);
  const auto results = ml_batch(obs, n, static_cast<std::size_t>(a.steps), a.lr, static_cast<std::size_t>(a.samples),
                                RandomSource(a.seed, 0x0317), threads);
  std::vector<Matrix> clouds;
  json initial = json::array(), best = json::array();
  for (const auto& r : results) {
    clouds.push_back(r.x);
    initial.push_back(r.initial_energy);
    best.push_back(r.best_energy);
  }
  const auto paths = write_clouds(a.out_dir, clouds, "sample");
  m.config() = {{"observations", a.obs}, {"points", n}, {"samples", a.samples}, {"steps", a.steps},
                {"lr", a.lr}, {"threads", threads}};
  m["initial_energy"] = initial;
  m["final_energy"] = best;
  m["nfe"] = nullptr;
  for (const auto& p : paths) m.output(p);
  m.write(fs::path(a.out_dir) / "manifest.json");
  return 0;
}

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string pdb, target;
  std::string metric = "all";
  double bandwidth = 0.0;
  int threads = 0;
  std::string out;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.pdb.empty() && a.target.empty()) throw UsageError("evaluate: give --pdb and/or --target-cloud");
  const bool want_cd = a.metric == "cd" || a.metric == "all";
  const bool want_emd = a.metric == "emd" || a.metric == "all";
  const bool want_rmsd = a.metric == "rmsd" || a.metric == "all";
  Manifest m("evaluate", 0);

  const std::vector<PointCloud> models = read_cloud_list(a.models);
  std::optional<PointCloud> atoms;
  if (!a.pdb.empty()) atoms = atom_cloud(read_pdb(a.pdb));
  std::optional<PointCloud> target;
  if (!a.target.empty()) target = read_xyz(a.target);
  KcAlignOptions kc;
  kc.bandwidth = a.bandwidth;

  std::vector<json> entries(models.size());
  parallel_for(models.size(), resolve_threads(a.threads), [&](std::size_t i) {
    json e = {{"file", a.models[i]}};
    PointCloud cloud = models[i];
    const PointCloud* ref = target ? &*target : nullptr;
    if (atoms) {
      const ModelEvaluation ev = evaluate_model(cloud, *atoms, target, kc);
      cloud = ev.aligned;
      if (!ref) ref = &*atoms;
      if (want_rmsd) {
        e["rmsd_atomic"] = ev.rmsd_atomic;
        e["rmsd_subsampled"] = ev.rmsd_subsampled ? json(*ev.rmsd_subsampled) : json(nullptr);
      }
    } else if (want_rmsd) {
      e["rmsd_subsampled"] = cloud.size() == ref->size() ? json(rmsd_subsampled(*ref, cloud)) : json(nullptr);
    }
    if (want_cd) e["cd"] = cloud.size() == ref->size() ? json(chamfer(cloud, *ref)) : json(nullptr);
    if (want_emd) e["emd"] = cloud.size() == ref->size() ? json(emd(cloud, *ref)) : json(nullptr);
    entries[i] = std::move(e);
  });

  json report = {{"samples", entries}};
  json mean = json::object();
  for (const char* key : {"cd", "emd", "rmsd_atomic", "rmsd_subsampled"}) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& e : entries) {
      if (e.contains(key) && e[key].is_number()) {
        sum += e[key].get<double>();
        ++count;
      }
    }
    if (count > 0) mean[key] = sum / static_cast<double>(count);
  }
  report["mean"] = mean;
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
    return 0;
  }
  write_file_atomic(a.out, text);
  m.config() = {{"model_clouds", a.models}, {"pdb", a.pdb}, {"target_cloud", a.target}, {"metric", a.metric},
                {"bandwidth", a.bandwidth}};
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct FitGmmArgs {
  std::string cloud, pdb;
  int k = 0;
  bool normalize = false;
  std::uint64_t seed = 0;
  std::string out;
};

int run_fit_gmm(const FitGmmArgs& a) {
  if (a.cloud.empty() == a.pdb.empty()) throw UsageError("fit-gmm: give exactly one of --cloud or --pdb");
  if (a.k < 1) throw UsageError("fit-gmm: --k must be positive");
  Manifest m("fit-gmm", a.seed);
  PointCloud cloud = a.cloud.empty() ? atom_cloud(read_pdb(a.pdb)) : read_xyz(a.cloud);
  if (a.normalize) cloud = center_and_scale(cloud);
  RandomSource rng(a.seed, 0x9a3a);
  const GmmModel gmm = fit_gmm(cloud, static_cast<std::size_t>(a.k), rng);
  write_xyz(a.out, PointCloud(gmm.means));
  m.config() = {{"input", a.cloud.empty() ? a.pdb : a.cloud}, {"k", a.k}, {"normalize", a.normalize}};
  m["weights"] = gmm.weights;
  m["covariance"] = matrix_json(Matrix(gmm.covariance));
  m["log_likelihood_trace"] = gmm.log_likelihood_trace;
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct ParsePdbArgs {
  std::string pdb;
  bool normalize = false;
  std::string out;
};

int run_parse_pdb(const ParsePdbArgs& a) {
  Manifest m("parse-pdb", 0);
  const auto atoms = read_pdb(a.pdb);
  PointCloud cloud = atom_cloud(atoms);
  if (a.normalize) cloud = center_and_scale(cloud);
  write_xyz(a.out, cloud);
  std::size_t het = 0;
  for (const auto& at : atoms) het += at.kind == RecordKind::hetatm ? 1 : 0;
  m.config() = {{"pdb", a.pdb}, {"normalize", a.normalize}};
  m["atoms"] = atoms.size();
  m["hetatm"] = het;
  m["radius_of_gyration"] = radius_of_gyration(atom_cloud(atoms));
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct GenMetricsArgs {
  std::vector<std::string> samples, refs;
  int threads = 0;
  std::string out;
};

int run_genmetrics(const GenMetricsArgs& a) {
  Manifest m("genmetrics", 0);
  const GenerationReport r =
      generation_metrics(read_cloud_list(a.samples), read_cloud_list(a.refs), resolve_threads(a.threads));
  const json report = {{"one_nna", r.one_nna}, {"cov", r.cov}, {"mmd", r.mmd}};
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
    return 0;
  }
  write_file_atomic(a.out, text);
  m.config() = {{"samples", a.samples}, {"refs", a.refs}};
  m["nfe"] = nullptr;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

struct AblateArgs {
  std::string model, dataset = "synth:mixture";
  int instances = 20, draws = 5, steps = 40, points = 64, projections = 2, proj_points = 0, subunit = 16, threads = 0;
  double alpha = 100.0, tmax = 1.0, tmin = 0.002, rho = 3.0;
  std::string beta = "1/t@0.15";
  std::uint64_t seed = 0;
  std::string out;
};

int run_ablate(const AblateArgs& a) {
  if (a.instances < 1 || a.draws < 1 || a.steps < 2) throw UsageError("ablate: invalid sizes");
  Manifest m("ablate", a.seed);
  const NetDenoiser net = read_model(a.model);
  // Test clouds from a seed stream disjoint from training.
  std::vector<PointCloud> clouds =
      load_dataset(a.dataset, static_cast<std::size_t>(a.instances), static_cast<std::size_t>(a.points),
                   a.seed ^ 0x7e57c10dULL);
  clouds.resize(std::min(clouds.size(), static_cast<std::size_t>(a.instances)));
  const auto n = static_cast<std::size_t>(clouds.front().size());

  // Matched NFE: Euler variants take 2N−1 steps, the corrected one N.
  const std::size_t nfe = 2 * static_cast<std::size_t>(a.steps) - 1;
  struct Variant {
    const char* name;
    Schedule sched;
  };
  std::vector<Variant> variants = {
      {"euler_ode", make_schedule(static_cast<int>(nfe), a.rho, a.tmax, a.tmin, "0", false)},
      {"noise", make_schedule(static_cast<int>(nfe), a.rho, a.tmax, a.tmin, a.beta, false)},
      {"noise_correction", make_schedule(a.steps, a.rho, a.tmax, a.tmin, a.beta, true)},
  };

  SimulationSpec spec;
  spec.projections = static_cast<std::size_t>(a.projections);
  spec.points_per_projection = a.proj_points > 0 ? static_cast<std::size_t>(a.proj_points) : std::max<std::size_t>(1, n / 2);
  if (a.subunit > 0) spec.subunit_points = static_cast<std::size_t>(a.subunit);

  std::vector<ObservationSet> sets;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    RandomSource r = RandomSource(a.seed, 0xab1a).split(i);
    sets.push_back(simulate_observations(clouds[i], spec, r));
    sets.back().bind(n);
  }

  const std::size_t threads = resolve_threads(a.threads);
  json rows = json::array();
  for (const auto& v : variants) {
    std::vector<double> cds(clouds.size() * static_cast<std::size_t>(a.draws));
    std::size_t used_nfe = 0;
    parallel_for(cds.size(), threads, [&](std::size_t job) {
      const std::size_t i = job / static_cast<std::size_t>(a.draws);
      GuidedScore score({&net, &sets[i], a.alpha});
      RandomSource r = RandomSource(a.seed, 0x5a3e).split(job);
      const SampleResult s = sample(score, v.sched, n, r);
      cds[job] = chamfer(PointCloud(s.x), clouds[i]);
      if (job == 0) used_nfe = s.nfe;
    });
    double mean = 0.0;
    for (double c : cds) mean += c;
    mean /= static_cast<double>(cds.size());
    rows.push_back({{"variant", v.name}, {"steps", v.sched.steps()}, {"beta", v.sched.beta.str()},
                    {"correction", v.sched.correction}, {"nfe", used_nfe}, {"mean_cd", mean}, {"cd", cds}});
  }
  const json report = {{"variants", rows}};
  write_file_atomic(a.out, report.dump(2) + "\n");
  m.config() = {{"model", a.model}, {"dataset", a.dataset}, {"instances", clouds.size()}, {"draws", a.draws},
                {"alpha", a.alpha}, {"projections", a.projections}, {"subunit", a.subunit}, {"steps", a.steps}};
  m["nfe"] = nfe;
  m.output(a.out);
  m.write(manifest_for_file(a.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointdps: point cloud reconstruction by diffusion posterior sampling"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a point-cloud denoiser");
  train_cmd->add_option("--dataset", train_args.dataset, "synth:<chair|blobs|helix|lshape|mixture> or a directory of .xyz")->required();
  train_cmd->add_option("--count", train_args.count, "Synthetic clouds")->capture_default_str();
  train_cmd->add_option("--points", train_args.points, "Points per synthetic cloud")->capture_default_str();
  train_cmd->add_option("--epochs", train_args.epochs)->capture_default_str();
  train_cmd->add_option("--batch", train_args.batch)->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr)->capture_default_str();
  train_cmd->add_option("--hidden", train_args.hidden)->capture_default_str();
  train_cmd->add_option("--layers", train_args.layers)->capture_default_str();
  train_cmd->add_option("--embed", train_args.embed)->capture_default_str();
  train_cmd->add_option("--augment", train_args.augment, "none|orthogonal|proper")->capture_default_str();
  train_cmd->add_option("--schedule", train_args.schedule, "two-phase|edm")->capture_default_str();
  train_cmd->add_option("--seed", train_args.seed)->capture_default_str();
  train_cmd->add_option("--out", train_args.out, "Model JSON")->required();

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate observations of a cloud");
  sim_cmd->add_option("--cloud", sim_args.cloud, "Ground-truth .xyz");
  sim_cmd->add_option("--pdb", sim_args.pdb, "Ground-truth PDB (centered and scaled)");
  sim_cmd->add_option("--projections", sim_args.projections)->capture_default_str();
  sim_cmd->add_option("--points", sim_args.points, "Points per projection");
  sim_cmd->add_option("--coarse", sim_args.coarse, "Coarse-grained points");
  sim_cmd->add_option("--subunit", sim_args.subunit, "Approximate subunit size");
  sim_cmd->add_option("--seed", sim_args.seed)->capture_default_str();
  sim_cmd->add_option("--out", sim_args.out, "Observation JSON")->required();

  auto add_sampling = [](CLI::App* cmd, SamplingArgs& s, bool guided) {
    cmd->add_option("--model", s.model)->required();
    if (guided) {
      cmd->add_option("--obs", s.obs, "Observation JSON")->required();
      cmd->add_option("--alpha", s.alpha, "Guidance strength")->capture_default_str();
    }
    cmd->add_option("--samples", s.samples)->capture_default_str();
    cmd->add_option("--steps", s.steps)->capture_default_str();
    cmd->add_option("--points", s.points, guided ? "Generated points (default: largest observation)" : "Generated points (default 64)");
    cmd->add_option("--rho", s.rho)->capture_default_str();
    cmd->add_option("--tmax", s.tmax)->capture_default_str();
    cmd->add_option("--tmin", s.tmin)->capture_default_str();
    cmd->add_option("--beta", s.beta, "expr[@threshold[:below]], expr = 1/t or a number")->capture_default_str();
    cmd->add_flag("--no-correction", s.no_correction, "Plain Euler-Maruyama steps");
    cmd->add_option("--seed", s.seed)->capture_default_str();
    cmd->add_option("--threads", s.threads, "Worker threads (default: POINTDPS_THREADS or 1)");
    cmd->add_option("--out-dir", s.out_dir)->required();
  };
  SamplingArgs rec_args;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Posterior sampling from observations");
  add_sampling(rec_cmd, rec_args, true);
  SamplingArgs sample_args;
  sample_args.steps = 100;
  sample_args.tmax = 80.0;
  sample_args.beta = "1/t@1:1";
  auto* sample_cmd = app.add_subcommand("sample", "Unconditional generation");
  add_sampling(sample_cmd, sample_args, false);

  MlArgs ml_args;
  auto* ml_cmd = app.add_subcommand("ml", "Maximum-likelihood baseline");
  ml_cmd->add_option("--obs", ml_args.obs)->required();
  ml_cmd->add_option("--samples", ml_args.samples)->capture_default_str();
  ml_cmd->add_option("--steps", ml_args.steps)->capture_default_str();
  ml_cmd->add_option("--lr", ml_args.lr)->capture_default_str();
  ml_cmd->add_option("--points", ml_args.points, "Generated points (default: largest observation)");
  ml_cmd->add_option("--seed", ml_args.seed)->capture_default_str();
  ml_cmd->add_option("--threads", ml_args.threads);
  ml_cmd->add_option("--out-dir", ml_args.out_dir)->required();

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score reconstructions against a target");
  eval_cmd->add_option("--model-clouds", eval_args.models)->required();
  eval_cmd->add_option("--pdb", eval_args.pdb, "Atomic target; enables gyration scaling and alignment");
  eval_cmd->add_option("--target-cloud", eval_args.target);
  eval_cmd->add_option("--metric", eval_args.metric)->check(CLI::IsMember({"cd", "emd", "rmsd", "all"}))->capture_default_str();
  eval_cmd->add_option("--bandwidth", eval_args.bandwidth, "Alignment kernel width (default 0.1·Rg)");
  eval_cmd->add_option("--threads", eval_args.threads);
  eval_cmd->add_option("--out", eval_args.out, "Metrics JSON (default: stdout)");

  FitGmmArgs gmm_args;
  auto* gmm_cmd = app.add_subcommand("fit-gmm", "Coarse-grain a cloud with a tied-covariance GMM");
  gmm_cmd->add_option("--cloud", gmm_args.cloud);
  gmm_cmd->add_option("--pdb", gmm_args.pdb);
  gmm_cmd->add_option("--k", gmm_args.k)->required();
  gmm_cmd->add_flag("--normalize", gmm_args.normalize, "Center and scale into [-1,1] first");
  gmm_cmd->add_option("--seed", gmm_args.seed)->capture_default_str();
  gmm_cmd->add_option("--out", gmm_args.out, "Means as .xyz")->required();

  ParsePdbArgs pdb_args;
  auto* pdb_cmd = app.add_subcommand("parse-pdb", "Extract heavy atoms");
  pdb_cmd->add_option("--pdb", pdb_args.pdb)->required();
  pdb_cmd->add_flag("--normalize", pdb_args.normalize, "Center and scale into [-1,1]");
  pdb_cmd->add_option("--out", pdb_args.out)->required();

  GenMetricsArgs gen_args;
  auto* gen_cmd = app.add_subcommand("genmetrics", "1-NNA, COV and MMD under Chamfer distance");
  gen_cmd->add_option("--samples", gen_args.samples)->required();
  gen_cmd->add_option("--refs", gen_args.refs)->required();
  gen_cmd->add_option("--threads", gen_args.threads);
  gen_cmd->add_option("--out", gen_args.out);

  AblateArgs abl_args;
  auto* abl_cmd = app.add_subcommand("ablate", "Sampler ablation at matched NFE");
  abl_cmd->add_option("--model", abl_args.model)->required();
  abl_cmd->add_option("--dataset", abl_args.dataset)->capture_default_str();
  abl_cmd->add_option("--instances", abl_args.instances)->capture_default_str();
  abl_cmd->add_option("--draws", abl_args.draws)->capture_default_str();
  abl_cmd->add_option("--points", abl_args.points, "Points per synthetic test cloud")->capture_default_str();
  abl_cmd->add_option("--steps", abl_args.steps, "Steps of the corrected sampler")->capture_default_str();
  abl_cmd->add_option("--projections", abl_args.projections)->capture_default_str();
  abl_cmd->add_option("--proj-points", abl_args.proj_points, "Points per projection (default: half the cloud)");
  abl_cmd->add_option("--subunit", abl_args.subunit)->capture_default_str();
  abl_cmd->add_option("--alpha", abl_args.alpha)->capture_default_str();
  abl_cmd->add_option("--beta", abl_args.beta)->capture_default_str();
  abl_cmd->add_option("--rho", abl_args.rho)->capture_default_str();
  abl_cmd->add_option("--tmax", abl_args.tmax)->capture_default_str();
  abl_cmd->add_option("--tmin", abl_args.tmin)->capture_default_str();
  abl_cmd->add_option("--seed", abl_args.seed)->capture_default_str();
  abl_cmd->add_option("--threads", abl_args.threads);
  abl_cmd->add_option("--out", abl_args.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*sim_cmd) return run_simulate(sim_args);
    if (*rec_cmd) return run_reconstruct(rec_args, "reconstruct", true);
    if (*sample_cmd) return run_reconstruct(sample_args, "sample", false);
    if (*ml_cmd) return run_ml(ml_args);
    if (*eval_cmd) return run_evaluate(eval_args);
    if (*gmm_cmd) return run_fit_gmm(gmm_args);
    if (*pdb_cmd) return run_parse_pdb(pdb_args);
    if (*gen_cmd) return run_genmetrics(gen_args);
    if (*abl_cmd) return run_ablate(abl_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
