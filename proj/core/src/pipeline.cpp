#include "latmap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"
#include "latmap/latent.hpp"
#include "latmap/mesh_fem.hpp"
#include "latmap/ot.hpp"
#include "latmap/rng.hpp"

namespace latmap::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kMethods = {"conformal", "lddmm", "ot"};

int method_code(const std::string& method) {
  for (std::size_t i = 0; i < kMethods.size(); ++i)
    if (kMethods[i] == method) return static_cast<int>(i);
  throw config_error("unknown method '" + method + "' (conformal, lddmm, ot)");
}

int ExperimentConfig::epochs_for(const std::string& method) const {
  switch (method_code(method)) {
    case 0: return epochs_conformal;
    case 1: return epochs_lddmm;
    default: return epochs_ot;
  }
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw config_error("run name must not be empty");
  if (n_train < 1) throw config_error("n_train must be >= 1");
  if (n_test < 1) throw config_error("n_test must be >= 1");
  if (grid.n_rho < 4 || grid.n_theta < 8)
    throw config_error("grid must be at least 4 x 8");
  if (!(grid.r_outer > 1.0)) throw config_error("r_outer must exceed 1");
  if (mesh_refine < 1) throw config_error("mesh_refine must be >= 1");
  if (fourier_modes < 1) throw config_error("fourier_modes must be >= 1");
  if (boundary_samples < 4 * fourier_modes || boundary_samples < 32)
    throw config_error("boundary_samples too small for the requested data");
  if (fit.modes < 4) throw config_error("fit.modes must be >= 4");
  if (!(fit.tol > 0.0)) throw config_error("fit.tol must be positive");
  if (fit.max_iters < 1) throw config_error("fit.max_iters must be >= 1");
  if (pca_modes < 0) throw config_error("pca_modes must be >= 0");
  if (pca_modes > n_train)
    throw config_error("pca_modes cannot exceed the training sample count");
  if (landmarks_per_curve < 8) throw config_error("landmarks_per_curve must be >= 8");
  if (!(snap_tol > 0.0)) throw config_error("snap_tol must be positive");
  if (max_retries < 1) throw config_error("max_retries must be >= 1");
  kernel.validate();
  {
    nn::TrainConfig tc = train;
    tc.epochs = 1;  // per-method epoch counts live outside TrainConfig
    tc.validate();
  }
  if (epochs_conformal < 1 || epochs_lddmm < 1 || epochs_ot < 1)
    throw config_error("per-method epochs must be >= 1");
  if (sweep_budgets.empty()) throw config_error("sweep_budgets must not be empty");
  for (int b : sweep_budgets)
    if (b < 1 || b > n_train)
      throw config_error("sweep budgets must lie in [1, n_train]");
  for (const auto& m : sweep_methods) method_code(m);
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw config_error("unknown config key '" + where + item.key() + "'");
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j,
             {"name", "seed", "n_train", "n_test", "grid", "mesh_refine",
              "fourier_modes", "boundary_samples", "fit", "pca_modes",
              "landmarks_per_curve", "snap_tol", "max_retries", "kernel", "train",
              "epochs", "sweep_budgets", "sweep_methods"},
             "");
  c.name = j.value("name", c.name);
  c.seed = j.value("seed", c.seed);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, {"n_rho", "n_theta", "r_outer"}, "grid.");
    c.grid.n_rho = g.value("n_rho", c.grid.n_rho);
    c.grid.n_theta = g.value("n_theta", c.grid.n_theta);
    c.grid.r_outer = g.value("r_outer", c.grid.r_outer);
  }
  c.mesh_refine = j.value("mesh_refine", c.mesh_refine);
  c.fourier_modes = j.value("fourier_modes", c.fourier_modes);
  c.boundary_samples = j.value("boundary_samples", c.boundary_samples);
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    check_keys(f, {"modes", "tol", "max_iters"}, "fit.");
    c.fit.modes = f.value("modes", c.fit.modes);
    c.fit.tol = f.value("tol", c.fit.tol);
    c.fit.max_iters = f.value("max_iters", c.fit.max_iters);
  }
  c.pca_modes = j.value("pca_modes", c.pca_modes);
  c.landmarks_per_curve = j.value("landmarks_per_curve", c.landmarks_per_curve);
  c.snap_tol = j.value("snap_tol", c.snap_tol);
  c.max_retries = j.value("max_retries", c.max_retries);
  if (j.contains("kernel")) {
    const json& k = j.at("kernel");
    check_keys(k,
               {"sigma", "timesteps", "substeps", "lambda_match", "max_iters",
                "step_size", "grad_tol", "use_adjoint"},
               "kernel.");
    c.kernel.sigma = k.value("sigma", c.kernel.sigma);
    c.kernel.timesteps = k.value("timesteps", c.kernel.timesteps);
    c.kernel.substeps = k.value("substeps", c.kernel.substeps);
    c.kernel.lambda_match = k.value("lambda_match", c.kernel.lambda_match);
    c.kernel.max_iters = k.value("max_iters", c.kernel.max_iters);
    c.kernel.step_size = k.value("step_size", c.kernel.step_size);
    c.kernel.grad_tol = k.value("grad_tol", c.kernel.grad_tol);
    c.kernel.use_adjoint = k.value("use_adjoint", c.kernel.use_adjoint);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"batch_size", "learning_rate", "beta1", "beta2", "adam_eps",
                "n_basis", "hidden_branch", "hidden_trunk", "activation",
                "val_every"},
               "train.");
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.beta1 = t.value("beta1", c.train.beta1);
    c.train.beta2 = t.value("beta2", c.train.beta2);
    c.train.adam_eps = t.value("adam_eps", c.train.adam_eps);
    c.train.n_basis = t.value("n_basis", c.train.n_basis);
    c.train.hidden_branch = t.value("hidden_branch", c.train.hidden_branch);
    c.train.hidden_trunk = t.value("hidden_trunk", c.train.hidden_trunk);
    c.train.activation = t.value("activation", c.train.activation);
    c.train.val_every = t.value("val_every", c.train.val_every);
  }
  if (j.contains("epochs")) {
    const json& e = j.at("epochs");
    check_keys(e, {"conformal", "lddmm", "ot"}, "epochs.");
    c.epochs_conformal = e.value("conformal", c.epochs_conformal);
    c.epochs_lddmm = e.value("lddmm", c.epochs_lddmm);
    c.epochs_ot = e.value("ot", c.epochs_ot);
  }
  if (j.contains("sweep_budgets"))
    c.sweep_budgets = j.at("sweep_budgets").get<std::vector<int>>();
  if (j.contains("sweep_methods"))
    c.sweep_methods = j.at("sweep_methods").get<std::vector<std::string>>();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["grid"] = {{"n_rho", c.grid.n_rho},
               {"n_theta", c.grid.n_theta},
               {"r_outer", c.grid.r_outer}};
  j["mesh_refine"] = c.mesh_refine;
  j["fourier_modes"] = c.fourier_modes;
  j["boundary_samples"] = c.boundary_samples;
  j["fit"] = {{"modes", c.fit.modes}, {"tol", c.fit.tol}, {"max_iters", c.fit.max_iters}};
  j["pca_modes"] = c.pca_modes;
  j["landmarks_per_curve"] = c.landmarks_per_curve;
  j["snap_tol"] = c.snap_tol;
  j["max_retries"] = c.max_retries;
  j["kernel"] = {{"sigma", c.kernel.sigma},
                 {"timesteps", c.kernel.timesteps},
                 {"substeps", c.kernel.substeps},
                 {"lambda_match", c.kernel.lambda_match},
                 {"max_iters", c.kernel.max_iters},
                 {"step_size", c.kernel.step_size},
                 {"grad_tol", c.kernel.grad_tol},
                 {"use_adjoint", c.kernel.use_adjoint}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"n_basis", c.train.n_basis},
                {"hidden_branch", c.train.hidden_branch},
                {"hidden_trunk", c.train.hidden_trunk},
                {"activation", c.train.activation},
                {"val_every", c.train.val_every}};
  j["epochs"] = {{"conformal", c.epochs_conformal},
                 {"lddmm", c.epochs_lddmm},
                 {"ot", c.epochs_ot}};
  j["sweep_budgets"] = c.sweep_budgets;
  j["sweep_methods"] = c.sweep_methods;
  return j;
}

ExperimentConfig load_config_file(const fs::path& path) {
  // a missing file is a missing artifact, but a file that fails to parse is
  // the user's config problem
  const std::string text = io::read_file(path);
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw config_error("config file " + path.string() + " is not valid json");
  return config_from_json(j);
}

fs::path RunPaths::sample(int id) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", id);
  return dataset() / buf;
}

fs::path RunPaths::latent_root(const std::string& method) const {
  return root / "latent" / method;
}

fs::path RunPaths::latent_sample(const std::string& method, int id) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", id);
  return latent_root(method) / buf;
}

fs::path RunPaths::model_dir(const std::string& tag) const { return root / "model" / tag; }

std::uint64_t sample_seed(const ExperimentConfig& cfg, int sample_id) {
  if (sample_id < cfg.n_train)
    return mix_seed(cfg.seed, 0x747261696eull, static_cast<std::uint64_t>(sample_id));
  return mix_seed(cfg.seed, 0x74657374ull,
                  static_cast<std::uint64_t>(sample_id - cfg.n_train));
}

std::string model_tag(const ExperimentConfig& cfg, const std::string& method, int budget) {
  if (budget < 0 || budget == cfg.n_train) return method;
  return method + "_n" + std::to_string(budget);
}

namespace {

constexpr std::uint64_t kShapeStream = 0x7368617065ull;
constexpr std::uint64_t kNeumannStream = 0x626f756e64ull;
constexpr std::uint64_t kTrainStream = 0x747261696eull;
constexpr std::uint64_t kProbeStream = 0x70726f6265ull;

struct StageTimer {
  RunPaths paths;
  std::string key;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  ~StageTimer() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j = json::object();
    if (fs::exists(paths.timings())) {
      try {
        j = io::read_json(paths.timings());
      } catch (...) {
        j = json::object();
      }
    }
    j[key] = secs;
    try {
      io::write_json(paths.timings(), j);
    } catch (...) {
      // timing bookkeeping must never fail a stage
    }
  }
};

void ensure_config_echo(const ExperimentConfig& cfg, const RunPaths& paths) {
  const std::string expected = config_to_json(cfg).dump(2) + "\n";
  if (fs::exists(paths.config())) {
    if (io::read_file(paths.config()) != expected)
      throw config_error("run directory " + paths.root.string() +
                         " was created with a different config");
    return;
  }
  io::write_file_atomic(paths.config(), expected);
}

int refined_flat_index(const conformal::ReferenceAnnulus& grid, int factor, int k) {
  const int i = k / grid.n_theta;
  const int j = k % grid.n_theta;
  return (factor * i) * (grid.n_theta * factor) + factor * j;
}

geom::ShapeParams shape_from_json(const json& p) {
  geom::ShapeParams sp;
  sp.xi0 = p.at("xi").at(0);
  sp.xi1 = p.at("xi").at(1);
  sp.xi2 = p.at("xi").at(2);
  sp.a = p.at("a");
  sp.xc = p.at("xc");
  sp.yc = p.at("yc");
  sp.seed = p.at("draw_seed");
  return sp;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// bilinear interpolation on the polar tensor grid, periodic in theta
double grid_interp(const conformal::ReferenceAnnulus& ref, const Eigen::VectorXd& f,
                   double rho, double theta) {
  const double drho = (ref.r_outer - 1.0) / (ref.n_rho - 1);
  double ti = (rho - 1.0) / drho;
  ti = std::clamp(ti, 0.0, static_cast<double>(ref.n_rho - 1));
  const int i0 = std::min(static_cast<int>(ti), ref.n_rho - 2);
  const double fi = ti - i0;

  const double dth = 2.0 * M_PI / ref.n_theta;
  double tj = theta / dth;
  tj -= std::floor(tj / ref.n_theta) * ref.n_theta;
  int j0 = static_cast<int>(tj);
  if (j0 >= ref.n_theta) j0 = 0;
  const double fj = tj - j0;
  const int j1 = (j0 + 1) % ref.n_theta;

  const double v00 = f[ref.node_index(i0, j0)];
  const double v01 = f[ref.node_index(i0, j1)];
  const double v10 = f[ref.node_index(i0 + 1, j0)];
  const double v11 = f[ref.node_index(i0 + 1, j1)];
  return (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01) + fi * ((1.0 - fj) * v10 + fj * v11);
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, const fs::path& out_root) {
  cfg.validate();
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  StageTimer timer{paths, "generate"};

  const auto refined = cfg.grid.refined(cfg.mesh_refine);
  const int total = cfg.n_train + cfg.n_test;
  json rejected = json::array();
  json manifest_rows = json::array();

  for (int id = 0; id < total; ++id) {
    const fs::path dir = paths.sample(id);
    const std::uint64_t base = sample_seed(cfg, id);

    if (fs::exists(dir / "u.csv")) {
      const json p = io::read_json(dir / "params.json");
      manifest_rows.push_back({{"id", id},
                               {"dir", dir.filename().string()},
                               {"seed", p.at("seed").get<std::uint64_t>()},
                               {"attempts", p.at("attempts").get<int>()}});
      continue;
    }

    geom::ShapeParams sp;
    conformal::DoublyConnectedMap dom;
    fem::TriMesh mesh;
    std::uint64_t draw_seed = 0;
    int attempt = 0;
    bool ok = false;
    while (attempt < cfg.max_retries && !ok) {
      draw_seed = mix_seed(base, kShapeStream, static_cast<std::uint64_t>(attempt));
      try {
        sp = geom::sample_shape_params(draw_seed);
        geom::BoundaryCurve inner = geom::generate_inner_boundary(sp, cfg.boundary_samples);
        dom = conformal::build_domain_map(inner, cfg.grid, cfg.fit);
        mesh = fem::mesh_pushforward(dom.map, refined);
        ok = true;
      } catch (const numeric_error& e) {
        rejected.push_back({{"sample", id},
                            {"attempt", attempt},
                            {"seed", draw_seed},
                            {"reason", e.what()}});
      }
      if (!ok) ++attempt;
    }
    if (!ok)
      throw numeric_error("sample " + std::to_string(id) + " exhausted its " +
                          std::to_string(cfg.max_retries) + " shape redraws");

    const fem::NeumannData bc = fem::sample_neumann(
        mix_seed(base, kNeumannStream, 0), cfg.fourier_modes, mesh.outer_perimeter);
    const fem::FemSolution sol = fem::assemble_and_solve(mesh, bc);

    json params;
    params["id"] = id;
    params["seed"] = base;
    params["draw_seed"] = draw_seed;
    params["attempts"] = attempt + 1;
    params["xi"] = {sp.xi0, sp.xi1, sp.xi2};
    params["a"] = sp.a;
    params["xc"] = sp.xc;
    params["yc"] = sp.yc;
    io::write_json(dir / "params.json", params);
    geom::write_curve_csv(dir / "inner.csv", dom.inner);
    geom::write_curve_csv(dir / "outer.csv", dom.outer);
    conformal::write_map_json(dir / "map.json", dom.map);
    fem::write_mesh(dir / "nodes.csv", dir / "tris.csv", mesh);
    fem::write_neumann_json(dir / "neumann.json", bc);

    std::ostringstream log;
    log << "attempts " << (attempt + 1) << "\n"
        << "fit_residual " << io::fmt_double(dom.map.residual) << "\n"
        << "mesh_min_angle_deg " << io::fmt_double(mesh.min_angle_deg) << "\n"
        << "load_correction " << io::fmt_double(sol.load_correction) << "\n"
        << "flux_inner " << io::fmt_double(sol.flux_inner) << "\n"
        << "flux_outer " << io::fmt_double(sol.flux_outer) << "\n"
        << "load_outer " << io::fmt_double(sol.load_outer) << "\n";
    io::write_file_atomic(dir / "log.txt", log.str());

    fem::write_field(dir / "u.csv", sol.u);  // completion marker, written last

    manifest_rows.push_back({{"id", id},
                             {"dir", dir.filename().string()},
                             {"seed", base},
                             {"attempts", attempt + 1}});
  }

  io::write_json(paths.rejected(), rejected);
  json manifest;
  manifest["n_train"] = cfg.n_train;
  manifest["n_test"] = cfg.n_test;
  manifest["grid"] = {{"n_rho", cfg.grid.n_rho},
                      {"n_theta", cfg.grid.n_theta},
                      {"r_outer", cfg.grid.r_outer}};
  manifest["mesh_refine"] = cfg.mesh_refine;
  manifest["samples"] = manifest_rows;
  io::write_json(paths.dataset_manifest(), manifest);
}

void cmd_map(const ExperimentConfig& cfg, const fs::path& out_root,
             const std::string& method) {
  cfg.validate();
  method_code(method);
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  if (!fs::exists(paths.dataset_manifest()))
    throw artifact_error("dataset manifest missing, run generate first");
  StageTimer timer{paths, "map_" + method};

  const int total = cfg.n_train + cfg.n_test;
  const auto& grid = cfg.grid;
  std::vector<latent::BuildResult> builds(total);
  const auto grid_pts = latent::grid_points(grid);

  json lddmm_diag = json::array();

  for (int id = 0; id < total; ++id) {
    const fs::path dir = paths.sample(id);
    fem::TriMesh mesh = fem::read_mesh(dir / "nodes.csv", dir / "tris.csv");
    fem::FemSolution sol;
    sol.u = fem::read_field(dir / "u.csv");
    if (sol.u.size() != static_cast<std::size_t>(mesh.node_count()))
      throw artifact_error("solution length does not match mesh in " + dir.string());
    const fem::NeumannData bc =
        fem::read_neumann_json(dir / "neumann.json", mesh.outer_perimeter);
    const geom::ShapeParams sp = shape_from_json(io::read_json(dir / "params.json"));

    if (method == "conformal") {
      const conformal::ConformalMap map = conformal::read_map_json(dir / "map.json");
      builds[id] =
          latent::build_sample_conformal(mesh, sol, bc, sp, map, grid, cfg.snap_tol);
    } else if (method == "lddmm") {
      // an interrupted stage resumes from the stored registrations
      const fs::path flow_path = paths.latent_sample(method, id) / "flow.json";
      lddmm::RegistrationResult reg;
      if (fs::exists(flow_path)) {
        reg = lddmm::read_flow_json(flow_path);
      } else {
        const geom::BoundaryCurve src_inner =
            geom::circle_curve(1.0, cfg.boundary_samples, geom::CurveRole::Inner);
        const geom::BoundaryCurve src_outer =
            geom::circle_curve(grid.r_outer, cfg.boundary_samples, geom::CurveRole::Outer);
        const geom::BoundaryCurve dst_inner =
            geom::read_curve_csv(dir / "inner.csv", geom::CurveRole::Inner);
        const geom::BoundaryCurve dst_outer =
            geom::read_curve_csv(dir / "outer.csv", geom::CurveRole::Outer);
        reg = lddmm::register_curves(src_inner, src_outer, dst_inner, dst_outer, cfg.kernel,
                                     cfg.landmarks_per_curve);
        lddmm::write_flow_json(flow_path, reg);
      }
      builds[id] =
          latent::build_sample_lddmm(mesh, sol, bc, sp, reg.flow, grid, cfg.snap_tol);

      // registration acceptance diagnostics: local invertibility on the grid
      // and a forward/inverse round trip on random annulus probes
      lddmm::Mat2 probes(500, 2);
      Rng prng(mix_seed(cfg.seed, kProbeStream, static_cast<std::uint64_t>(id)));
      for (int r = 0; r < probes.rows(); ++r) {
        const double rho = prng.uniform(1.0, grid.r_outer);
        const double th = prng.uniform(0.0, 2.0 * M_PI);
        probes(r, 0) = rho * std::cos(th);
        probes(r, 1) = rho * std::sin(th);
      }
      lddmm::Mat2 gp(grid_pts.size(), 2);
      for (std::size_t k = 0; k < grid_pts.size(); ++k) {
        gp(static_cast<int>(k), 0) = grid_pts[k][0];
        gp(static_cast<int>(k), 1) = grid_pts[k][1];
      }
      const double min_jac = lddmm::jacobian_min_det(reg.flow, gp);
      const lddmm::Mat2 there = lddmm::flow_forward(reg.flow, probes);
      const lddmm::Mat2 back = lddmm::flow_inverse(reg.flow, there);
      const double roundtrip = (back - probes).rowwise().norm().maxCoeff();
      if (!(min_jac > 0.0))
        throw numeric_error("registration of sample " + std::to_string(id) +
                            " is not orientation-preserving on the grid");
      lddmm_diag.push_back({{"sample", id},
                            {"converged", reg.converged},
                            {"iterations", reg.iterations},
                            {"energy", reg.energy},
                            {"match_error", reg.match_error},
                            {"min_jacobian", min_jac},
                            {"roundtrip_max", roundtrip}});
    } else {
      const conformal::ConformalMap map = conformal::read_map_json(dir / "map.json");
      const fem::TriMesh coarse = fem::mesh_pushforward(map, grid);
      std::vector<std::array<double, 2>> cloud(coarse.node_count());
      std::vector<double> values(coarse.node_count());
      for (int k = 0; k < coarse.node_count(); ++k) {
        cloud[k] = {coarse.x[k], coarse.y[k]};
        values[k] = sol.u[refined_flat_index(grid, cfg.mesh_refine, k)];
      }
      const fs::path perm_path = paths.latent_sample(method, id) / "perm.csv";
      ot::TransportPermutation perm;
      if (fs::exists(perm_path)) {
        perm = ot::read_perm_csv(perm_path);
      } else {
        perm = ot::solve_assignment(ot::cost_matrix(grid_pts, cloud));
        ot::write_perm_csv(perm_path, perm);
      }
      builds[id] = latent::build_sample_ot(mesh, values, cloud, bc, sp, perm, grid);
    }
  }

  // geometry codes from the displacement fields, basis fitted on the
  // training split only
  json meta;
  meta["method"] = method;
  meta["n_samples"] = total;
  json train_ids = json::array();
  for (int id = 0; id < cfg.n_train; ++id) train_ids.push_back(id);
  meta["train_ids"] = train_ids;
  if (method != "conformal") {
    const Eigen::Index d = builds[0].displacement.size();
    Eigen::MatrixXd rows(cfg.n_train, d);
    for (int id = 0; id < cfg.n_train; ++id) {
      if (builds[id].displacement.size() != d)
        throw numeric_error("inconsistent displacement sizes across samples");
      rows.row(id) = builds[id].displacement.transpose();
    }
    const latent::PcaBasis pca = latent::fit_pca(rows, cfg.pca_modes);
    latent::write_pca(paths.latent_root(method) / "pca.json",
                      paths.latent_root(method) / "modes.csv", pca);
    for (int id = 0; id < total; ++id)
      builds[id].sample.geo = latent::encode_geometry(pca, builds[id].displacement);
    meta["pca_modes"] = pca.q();
  } else {
    meta["pca_modes"] = 0;
  }

  std::vector<double> defects, floors;
  for (int id = 0; id < total; ++id) {
    latent::write_sample(paths.latent_sample(method, id), builds[id].sample);
    defects.push_back(builds[id].sample.defect);
    floors.push_back(latent::harmonic_defect(
        latent::annulus_field_from_boundary(builds[id].sample.bc0, grid), grid));
  }
  meta["defect"] = {{"mean", mean_of(defects)},
                    {"median", median_of(defects)},
                    {"max", *std::max_element(defects.begin(), defects.end())}};
  meta["stencil_floor_median"] = median_of(floors);
  json defect_rows = json::array();
  for (int id = 0; id < total; ++id)
    defect_rows.push_back({{"sample", id}, {"defect", defects[id]}, {"floor", floors[id]}});
  meta["defects"] = defect_rows;
  io::write_json(paths.latent_root(method) / "meta.json", meta);
  if (method == "lddmm")
    io::write_json(paths.latent_root(method) / "diagnostics.json", lddmm_diag);
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out_root,
               const std::string& method, int budget) {
  cfg.validate();
  method_code(method);
  if (budget < 0) budget = cfg.n_train;
  if (budget < 1 || budget > cfg.n_train)
    throw config_error("training budget must lie in [1, n_train]");
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  const std::string tag = model_tag(cfg, method, budget);
  StageTimer timer{paths, "train_" + tag};

  std::vector<latent::LatentSample> samples;
  samples.reserve(budget);
  for (int id = 0; id < budget; ++id)
    samples.push_back(latent::read_sample(paths.latent_sample(method, id), cfg.grid));

  nn::TrainConfig tc = cfg.train;
  tc.epochs = cfg.epochs_for(method);
  tc.seed = mix_seed(cfg.seed, kTrainStream,
                     static_cast<std::uint64_t>(method_code(method)) * 1024 +
                         static_cast<std::uint64_t>(budget));

  const fs::path mdir = paths.model_dir(tag);
  nn::LatentOperatorModel model;
  nn::AdamState adam;
  int start_epoch = 0;
  if (fs::exists(mdir / "checkpoint.json")) {
    nn::Checkpoint ck = nn::read_checkpoint(mdir);
    if (ck.epochs_done >= tc.epochs) return;  // already trained
    if (ck.model.n_basis != tc.n_basis || ck.cfg.seed != tc.seed)
      throw config_error("existing checkpoint in " + mdir.string() +
                         " belongs to a different configuration");
    model = std::move(ck.model);
    adam = std::move(ck.adam);
    start_epoch = ck.epochs_done;
  } else {
    const int q = static_cast<int>(samples.front().geo.size());
    model = nn::make_model(cfg.grid, q, tc);
    adam = nn::make_adam_state(model);
  }

  const nn::TrainResult res = nn::train(model, adam, samples, tc, start_epoch);
  nn::write_checkpoint(mdir, model, adam, tc, tc.epochs);
  nn::write_trace_csv(mdir / "trace.csv", res.trace, start_epoch > 0);

  json ids = json::array();
  for (int id = 0; id < budget; ++id) ids.push_back(id);
  io::write_json(mdir / "train_ids.json", json{{"ids", ids}});
}

EvalSummary cmd_eval(const ExperimentConfig& cfg, const fs::path& out_root,
                     const std::string& method, int budget) {
  cfg.validate();
  method_code(method);
  if (budget < 0) budget = cfg.n_train;
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  const std::string tag = model_tag(cfg, method, budget);
  StageTimer timer{paths, "eval_" + tag};

  const fs::path mdir = paths.model_dir(tag);
  const nn::Checkpoint ck = nn::read_checkpoint(mdir);

  // split hygiene: no test id may appear in any training-side artifact
  {
    const json ids = io::read_json(mdir / "train_ids.json");
    const json meta = io::read_json(paths.latent_root(method) / "meta.json");
    for (const auto& v : ids.at("ids")) {
      if (v.get<int>() >= cfg.n_train)
        throw config_error("model " + tag + " was trained on a test sample");
    }
    for (const auto& v : meta.at("train_ids")) {
      if (v.get<int>() >= cfg.n_train)
        throw config_error("latent basis for " + method + " saw a test sample");
    }
  }

  const auto& grid = cfg.grid;
  std::vector<std::vector<double>> rows;
  std::vector<double> lat_errs, dom_errs;

  for (int t = 0; t < cfg.n_test; ++t) {
    const int id = cfg.n_train + t;
    const latent::LatentSample s =
        latent::read_sample(paths.latent_sample(method, id), grid);
    const Eigen::VectorXd pred = nn::predict(ck.model, s.bc0, s.geo);
    const double lat = nn::relative_l2(pred, s.u0);

    // transport the prediction back to the physical mesh and compare there
    const fs::path dir = paths.sample(id);
    const conformal::ConformalMap map = conformal::read_map_json(dir / "map.json");
    const fem::TriMesh coarse = fem::mesh_pushforward(map, grid);
    const std::vector<double> u_ref = fem::read_field(dir / "u.csv");
    const int n = coarse.node_count();
    Eigen::VectorXd truth(n), pd(n);
    for (int k = 0; k < n; ++k)
      truth[k] = u_ref[refined_flat_index(grid, cfg.mesh_refine, k)];

    if (method == "conformal") {
      pd = pred;
    } else if (method == "ot") {
      const ot::TransportPermutation perm =
          ot::read_perm_csv(paths.latent_sample(method, id) / "perm.csv");
      if (static_cast<int>(perm.perm.size()) != n)
        throw artifact_error("permutation size mismatch for sample " + std::to_string(id));
      for (int k = 0; k < n; ++k) pd[perm.perm[k]] = pred[k];
    } else {
      const lddmm::RegistrationResult reg =
          lddmm::read_flow_json(paths.latent_sample(method, id) / "flow.json");
      lddmm::Mat2 pts(n, 2);
      for (int k = 0; k < n; ++k) {
        pts(k, 0) = coarse.x[k];
        pts(k, 1) = coarse.y[k];
      }
      const lddmm::Mat2 back = lddmm::flow_inverse(reg.flow, pts);
      for (int k = 0; k < n; ++k) {
        const double rho = std::hypot(back(k, 0), back(k, 1));
        const double th = std::atan2(back(k, 1), back(k, 0));
        pd[k] = grid_interp(grid, pred, rho, th);
      }
    }

    const std::vector<double> mass = fem::lumped_mass(coarse);
    double msum = 0.0, tmean = 0.0, pmean = 0.0;
    for (int k = 0; k < n; ++k) {
      msum += mass[k];
      tmean += mass[k] * truth[k];
      pmean += mass[k] * pd[k];
    }
    tmean /= msum;
    pmean /= msum;
    double num = 0.0, den = 0.0;
    for (int k = 0; k < n; ++k) {
      const double dt = truth[k] - tmean;
      const double dp = pd[k] - pmean;
      num += mass[k] * (dp - dt) * (dp - dt);
      den += mass[k] * dt * dt;
    }
    if (!(den > 0.0)) throw numeric_error("zero reference field in domain comparison");
    const double dom = std::sqrt(num / den);

    rows.push_back({static_cast<double>(id), lat, dom});
    lat_errs.push_back(lat);
    dom_errs.push_back(dom);
  }

  io::write_csv(paths.report() / ("eval_" + tag + ".csv"),
                "sample,latent_rel_l2,domain_rel_l2", rows);

  EvalSummary sum;
  sum.method = method;
  sum.budget = budget;
  sum.n_test = cfg.n_test;
  sum.latent_mean = mean_of(lat_errs);
  sum.latent_sd = sd_of(lat_errs);
  sum.domain_mean = mean_of(dom_errs);
  sum.domain_sd = sd_of(dom_errs);

  json j;
  j["method"] = method;
  j["budget"] = budget;
  j["n_test"] = cfg.n_test;
  j["pca_modes"] = method == "conformal" ? 0 : cfg.pca_modes;
  j["epochs"] = cfg.epochs_for(method);
  j["latent_rel_l2"] = {{"mean", sum.latent_mean}, {"sd", sum.latent_sd}};
  j["domain_rel_l2"] = {{"mean", sum.domain_mean}, {"sd", sum.domain_sd}};
  j["rows_file"] = "report/eval_" + tag + ".csv";
  j["checkpoint"] = "model/" + tag + "/checkpoint.json";
  io::write_json(paths.report() / ("eval_" + tag + ".json"), j);
  return sum;
}

void cmd_report(const ExperimentConfig& cfg, const fs::path& out_root) {
  cfg.validate();
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  StageTimer timer{paths, "report"};

  json results;
  results["config"] = config_to_json(cfg);
  results["timings_file"] = "report/timings.json";
  json methods = json::object();

  std::ostringstream table;
  table << "method     pca_modes  epochs  rel_l2_mean   rel_l2_sd     latent_rel_l2\n";
  char line[160];
  bool any = false;
  for (const auto& m : kMethods) {
    const fs::path f = paths.report() / ("eval_" + m + ".json");
    if (!fs::exists(f)) continue;
    any = true;
    const json e = io::read_json(f);
    json entry = e;
    entry["source"] = "report/eval_" + m + ".json";
    const fs::path lm = paths.latent_root(m) / "meta.json";
    if (fs::exists(lm)) {
      const json meta = io::read_json(lm);
      entry["defect"] = meta.at("defect");
      entry["stencil_floor_median"] = meta.at("stencil_floor_median");
      entry["defect_source"] = "latent/" + m + "/meta.json";
    }
    methods[m] = entry;
    std::snprintf(line, sizeof(line), "%-10s %-10d %-7d %-13.6e %-13.6e %-13.6e\n",
                  m.c_str(), e.at("pca_modes").get<int>(), e.at("epochs").get<int>(),
                  e.at("domain_rel_l2").at("mean").get<double>(),
                  e.at("domain_rel_l2").at("sd").get<double>(),
                  e.at("latent_rel_l2").at("mean").get<double>());
    table << line;
  }
  if (!any) throw artifact_error("no evaluation artifacts to report on");
  results["methods"] = methods;

  // sample-efficiency curve points
  json sweep_rows = json::array();
  std::vector<std::vector<double>> sweep_csv;
  for (const auto& m : kMethods) {
    std::vector<int> budgets = cfg.sweep_budgets;
    if (std::find(budgets.begin(), budgets.end(), cfg.n_train) == budgets.end())
      budgets.push_back(cfg.n_train);
    std::sort(budgets.begin(), budgets.end());
    for (int b : budgets) {
      const std::string tag = model_tag(cfg, m, b);
      const fs::path f = paths.report() / ("eval_" + tag + ".json");
      if (!fs::exists(f)) continue;
      const json e = io::read_json(f);
      sweep_rows.push_back({{"method", m},
                            {"n_train", b},
                            {"latent_rel_l2", e.at("latent_rel_l2").at("mean")},
                            {"domain_rel_l2", e.at("domain_rel_l2").at("mean")},
                            {"source", "report/eval_" + tag + ".json"}});
      sweep_csv.push_back({static_cast<double>(method_code(m)), static_cast<double>(b),
                           e.at("latent_rel_l2").at("mean").get<double>(),
                           e.at("domain_rel_l2").at("mean").get<double>()});
    }
  }
  results["sweep"] = sweep_rows;

  io::write_file_atomic(paths.report() / "table.txt", table.str());
  io::write_json(paths.report() / "results.json", results);

  std::ostringstream sweep;
  sweep << "method,n_train,latent_rel_l2,domain_rel_l2\n";
  for (const auto& r : sweep_csv) {
    sweep << kMethods[static_cast<int>(r[0])] << ',' << static_cast<int>(r[1]) << ','
          << io::fmt_double(r[2]) << ',' << io::fmt_double(r[3]) << '\n';
  }
  io::write_file_atomic(paths.report() / "sweep.csv", sweep.str());
}

void cmd_sweep(const ExperimentConfig& cfg, const fs::path& out_root) {
  cfg.validate();
  RunPaths paths{out_root};
  ensure_config_echo(cfg, paths);
  {
    StageTimer timer{paths, "sweep"};
    if (!fs::exists(paths.dataset_manifest())) cmd_generate(cfg, out_root);
    for (const auto& m : cfg.sweep_methods) {
      if (!fs::exists(paths.latent_root(m) / "meta.json")) cmd_map(cfg, out_root, m);
      for (int b : cfg.sweep_budgets) {
        cmd_train(cfg, out_root, m, b);
        cmd_eval(cfg, out_root, m, b);
      }
    }
  }
  cmd_report(cfg, out_root);
}

void run_all(const ExperimentConfig& cfg, const fs::path& out_root,
             const std::vector<std::string>& methods) {
  cmd_generate(cfg, out_root);
  for (const auto& m : methods) {
    cmd_map(cfg, out_root, m);
    cmd_train(cfg, out_root, m);
    cmd_eval(cfg, out_root, m);
  }
  cmd_report(cfg, out_root);
}

}  // namespace latmap::pipeline
