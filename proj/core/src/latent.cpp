#include "latmap/latent.hpp"

#include <cmath>

#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"

namespace latmap::latent {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

Eigen::VectorXd centered(Eigen::VectorXd v) {
  v.array() -= v.mean();
  return v;
}

std::vector<geom::Cplx> outer_ring_polygon(const fem::TriMesh& mesh) {
  std::vector<geom::Cplx> poly(mesh.n_theta);
  for (int j = 0; j < mesh.n_theta; ++j) {
    const int id = mesh.node_index(mesh.n_rho - 1, j);
    poly[j] = {mesh.x[id], mesh.y[id]};
  }
  return poly;
}
}  // namespace

std::vector<std::array<double, 2>> grid_points(const ReferenceAnnulus& ref) {
  std::vector<std::array<double, 2>> pts(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i)
    for (int j = 0; j < ref.n_theta; ++j) {
      const auto p = ref.node(i, j);
      pts[ref.node_index(i, j)] = {p.real(), p.imag()};
    }
  return pts;
}

PullbackResult pullback_field_at_points(const fem::TriMesh& mesh, const std::vector<double>& u,
                                        const std::vector<std::array<double, 2>>& pts,
                                        double snap_tol) {
  const fem::FieldSampler sampler(mesh);
  PullbackResult r;
  r.values.resize(static_cast<Eigen::Index>(pts.size()));
  for (size_t k = 0; k < pts.size(); ++k) {
    double snap = 0.0;
    r.values[static_cast<Eigen::Index>(k)] = sampler.sample(u, pts[k][0], pts[k][1], snap_tol, &snap);
    r.max_snap = std::max(r.max_snap, snap);
  }
  if (!r.values.allFinite()) throw numeric_error("pullback: non-finite sampled value");
  return r;
}

double outer_arclength(const fem::TriMesh& mesh, std::array<double, 2> p) {
  return geom::project_arclength(outer_ring_polygon(mesh), {p[0], p[1]});
}

double harmonic_defect(const Eigen::VectorXd& u0, const ReferenceAnnulus& ref) {
  if (u0.size() != ref.node_count()) throw config_error("harmonic_defect: field size mismatch");
  const double drho = (ref.r_outer - 1.0) / (ref.n_rho - 1);
  const double dth = kTwoPi / ref.n_theta;
  double acc = 0.0;
  int count = 0;
  for (int i = 1; i + 1 < ref.n_rho; ++i) {
    const double rho = ref.rho(i);
    for (int j = 0; j < ref.n_theta; ++j) {
      const double c = u0[ref.node_index(i, j)];
      const double up = u0[ref.node_index(i + 1, j)];
      const double dn = u0[ref.node_index(i - 1, j)];
      const double lf = u0[ref.node_index(i, (j + ref.n_theta - 1) % ref.n_theta)];
      const double rt = u0[ref.node_index(i, (j + 1) % ref.n_theta)];
      const double lap = (up - 2.0 * c + dn) / (drho * drho) + (up - dn) / (2.0 * drho * rho) +
                         (rt - 2.0 * c + lf) / (dth * dth * rho * rho);
      acc += lap * lap;
      ++count;
    }
  }
  return std::sqrt(acc / count);
}

Eigen::VectorXd annulus_field_from_boundary(const Eigen::VectorXd& bc0,
                                            const ReferenceAnnulus& ref) {
  const int n = ref.n_theta;
  if (bc0.size() != n) throw config_error("annulus_field_from_boundary: bad boundary size");
  const int half = n / 2;
  std::vector<double> ak(half + 1, 0.0), bk(half + 1, 0.0);
  for (int k = 1; k <= half; ++k) {
    for (int j = 0; j < n; ++j) {
      const double th = kTwoPi * j / n;
      ak[k] += bc0[j] * std::cos(k * th);
      bk[k] += bc0[j] * std::sin(k * th);
    }
    ak[k] *= 2.0 / n;
    bk[k] *= 2.0 / n;
  }
  ak[half] *= 0.5;  // Nyquist column is not doubled
  bk[half] = 0.0;

  Eigen::VectorXd u(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i) {
    const double rho = ref.rho(i);
    for (int j = 0; j < ref.n_theta; ++j) {
      const double th = ref.theta(j);
      double acc = 0.0;
      for (int k = 1; k <= half; ++k) {
        const double dr = k * (std::pow(ref.r_outer, k - 1) - std::pow(ref.r_outer, -k - 1));
        const double radial = (std::pow(rho, k) + std::pow(rho, -k)) / dr;
        acc += radial * (ak[k] * std::cos(k * th) + bk[k] * std::sin(k * th));
      }
      u[ref.node_index(i, j)] = acc;
    }
  }
  return u;
}

BuildResult build_sample_conformal(const fem::TriMesh& fem_mesh, const fem::FemSolution& sol,
                                   const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                                   const conformal::ConformalMap& map,
                                   const ReferenceAnnulus& ref, double snap_tol) {
  std::vector<std::array<double, 2>> pts(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i)
    for (int j = 0; j < ref.n_theta; ++j) {
      const auto z = map.eval(ref.node(i, j));
      pts[ref.node_index(i, j)] = {z.real(), z.imag()};
    }
  PullbackResult pb = pullback_field_at_points(fem_mesh, sol.u, pts, snap_tol);

  BuildResult out;
  out.sample.u0 = centered(std::move(pb.values));
  out.sample.bc0.resize(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j) {
    const geom::Cplx zeta = std::polar(ref.r_outer, ref.theta(j));
    const auto& p = pts[ref.node_index(ref.n_rho - 1, j)];
    const double s = outer_arclength(fem_mesh, p);
    // flux density transforms with the boundary stretch |g'|, so the latent
    // field solves the annulus Neumann problem with exactly this data
    out.sample.bc0[j] = std::abs(map.deriv(zeta)) * bc.eval(s);
  }
  out.sample.geo.resize(0);
  out.sample.alpha_meta = alpha;
  out.sample.method = "conformal";
  out.sample.max_snap = pb.max_snap;
  out.sample.defect = harmonic_defect(out.sample.u0, ref);
  return out;
}

BuildResult build_sample_lddmm(const fem::TriMesh& fem_mesh, const fem::FemSolution& sol,
                               const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                               const lddmm::DiffeoFlow& flow, const ReferenceAnnulus& ref,
                               double snap_tol) {
  const auto grid = grid_points(ref);
  lddmm::Mat2 x(grid.size(), 2);
  for (size_t k = 0; k < grid.size(); ++k) {
    x(static_cast<Eigen::Index>(k), 0) = grid[k][0];
    x(static_cast<Eigen::Index>(k), 1) = grid[k][1];
  }
  const lddmm::Mat2 mapped = lddmm::flow_forward(flow, x);
  std::vector<std::array<double, 2>> pts(grid.size());
  for (size_t k = 0; k < grid.size(); ++k)
    pts[k] = {mapped(static_cast<Eigen::Index>(k), 0), mapped(static_cast<Eigen::Index>(k), 1)};

  PullbackResult pb = pullback_field_at_points(fem_mesh, sol.u, pts, snap_tol);

  BuildResult out;
  out.sample.u0 = centered(std::move(pb.values));
  out.sample.bc0.resize(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j)
    out.sample.bc0[j] = bc.eval(outer_arclength(fem_mesh, pts[ref.node_index(ref.n_rho - 1, j)]));
  out.displacement.resize(2 * static_cast<Eigen::Index>(grid.size()));
  for (size_t k = 0; k < grid.size(); ++k) {
    out.displacement[2 * k] = pts[k][0] - grid[k][0];
    out.displacement[2 * k + 1] = pts[k][1] - grid[k][1];
  }
  out.sample.alpha_meta = alpha;
  out.sample.method = "lddmm";
  out.sample.max_snap = pb.max_snap;
  out.sample.defect = harmonic_defect(out.sample.u0, ref);
  return out;
}

BuildResult build_sample_ot(const fem::TriMesh& fem_mesh,
                            const std::vector<double>& values_on_cloud,
                            const std::vector<std::array<double, 2>>& cloud,
                            const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                            const ot::TransportPermutation& perm, const ReferenceAnnulus& ref) {
  if (static_cast<int>(cloud.size()) != ref.node_count() ||
      cloud.size() != values_on_cloud.size() || cloud.size() != perm.perm.size())
    throw config_error("build_sample_ot: cloud, values and permutation sizes disagree");

  const std::vector<double> pulled = ot::transport_pullback(perm, values_on_cloud);
  BuildResult out;
  out.sample.u0 = centered(Eigen::Map<const Eigen::VectorXd>(pulled.data(), pulled.size()));

  out.sample.bc0.resize(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j) {
    const auto& p = cloud[perm.perm[ref.node_index(ref.n_rho - 1, j)]];
    out.sample.bc0[j] = bc.eval(outer_arclength(fem_mesh, p));
  }
  const auto grid = grid_points(ref);
  out.displacement.resize(2 * static_cast<Eigen::Index>(grid.size()));
  for (size_t k = 0; k < grid.size(); ++k) {
    const auto& p = cloud[perm.perm[k]];
    out.displacement[2 * k] = p[0] - grid[k][0];
    out.displacement[2 * k + 1] = p[1] - grid[k][1];
  }
  out.sample.alpha_meta = alpha;
  out.sample.method = "ot";
  out.sample.defect = harmonic_defect(out.sample.u0, ref);
  return out;
}

PcaBasis fit_pca(const Eigen::MatrixXd& rows, int q) {
  if (rows.rows() < 2) throw config_error("fit_pca: need at least 2 samples");
  if (q < 0 || q > rows.rows() || q > rows.cols())
    throw config_error("fit_pca: mode count exceeds sample count or dimension");

  PcaBasis basis;
  basis.mean = rows.colwise().mean();
  Eigen::MatrixXd c = rows.rowwise() - basis.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  basis.modes = svd.matrixV().leftCols(q);
  basis.singular_values = svd.singularValues().head(q);
  for (int k = 0; k < q; ++k) {
    Eigen::Index idx = 0;
    basis.modes.col(k).cwiseAbs().maxCoeff(&idx);
    if (basis.modes(idx, k) < 0) basis.modes.col(k) = -basis.modes.col(k);
  }
  return basis;
}

Eigen::VectorXd encode_geometry(const PcaBasis& basis, const Eigen::VectorXd& displacement) {
  if (displacement.size() != basis.mean.size())
    throw config_error("encode_geometry: displacement size mismatch");
  return basis.modes.transpose() * (displacement - basis.mean);
}

void write_sample(const std::filesystem::path& dir, const LatentSample& s) {
  std::vector<std::vector<double>> rows;
  rows.reserve(s.u0.size());
  for (Eigen::Index i = 0; i < s.u0.size(); ++i) rows.push_back({static_cast<double>(i), s.u0[i]});
  io::write_csv(dir / "u0.csv", "id,u", rows);

  rows.clear();
  for (Eigen::Index j = 0; j < s.bc0.size(); ++j)
    rows.push_back({static_cast<double>(j), s.bc0[j]});
  io::write_csv(dir / "bc0.csv", "j,b", rows);

  rows.clear();
  for (Eigen::Index k = 0; k < s.geo.size(); ++k)
    rows.push_back({static_cast<double>(k), s.geo[k]});
  io::write_csv(dir / "geo.csv", "k,c", rows);

  nlohmann::json meta;
  meta["method"] = s.method;
  meta["seed"] = s.alpha_meta.seed;
  meta["xi"] = {s.alpha_meta.xi0, s.alpha_meta.xi1, s.alpha_meta.xi2};
  meta["a"] = s.alpha_meta.a;
  meta["xc"] = s.alpha_meta.xc;
  meta["yc"] = s.alpha_meta.yc;
  meta["harmonic_defect"] = s.defect;
  meta["max_snap"] = s.max_snap;
  io::write_json(dir / "meta.json", meta);
}

LatentSample read_sample(const std::filesystem::path& dir, const ReferenceAnnulus& ref) {
  LatentSample s;
  const io::Csv u0 = io::read_csv(dir / "u0.csv");
  s.u0.resize(u0.rows.size());
  for (const auto& row : u0.rows) s.u0[static_cast<Eigen::Index>(row[0])] = row[1];
  if (s.u0.size() != ref.node_count())
    throw artifact_error("read_sample: " + dir.string() + " field size does not match the grid");

  const io::Csv bc0 = io::read_csv(dir / "bc0.csv");
  s.bc0.resize(bc0.rows.size());
  for (const auto& row : bc0.rows) s.bc0[static_cast<Eigen::Index>(row[0])] = row[1];
  if (s.bc0.size() != ref.n_theta)
    throw artifact_error("read_sample: " + dir.string() + " boundary size does not match the grid");

  const io::Csv geo = io::read_csv(dir / "geo.csv");
  s.geo.resize(geo.rows.size());
  for (const auto& row : geo.rows) s.geo[static_cast<Eigen::Index>(row[0])] = row[1];

  const nlohmann::json meta = io::read_json(dir / "meta.json");
  s.method = meta.at("method");
  s.alpha_meta.seed = meta.at("seed");
  s.alpha_meta.xi0 = meta.at("xi")[0];
  s.alpha_meta.xi1 = meta.at("xi")[1];
  s.alpha_meta.xi2 = meta.at("xi")[2];
  s.alpha_meta.a = meta.at("a");
  s.alpha_meta.xc = meta.at("xc");
  s.alpha_meta.yc = meta.at("yc");
  s.defect = meta.at("harmonic_defect");
  s.max_snap = meta.at("max_snap");
  return s;
}

void write_pca(const std::filesystem::path& json_path, const std::filesystem::path& modes_csv,
               const PcaBasis& basis) {
  nlohmann::json j;
  j["q"] = basis.q();
  j["singular_values"] = std::vector<double>(
      basis.singular_values.data(), basis.singular_values.data() + basis.singular_values.size());
  j["mean"] = std::vector<double>(basis.mean.data(), basis.mean.data() + basis.mean.size());
  io::write_json(json_path, j);

  std::string header = "row";
  for (int k = 0; k < basis.q(); ++k) header += ",mode_" + std::to_string(k);
  std::vector<std::vector<double>> rows;
  rows.reserve(basis.mean.size());
  for (Eigen::Index r = 0; r < basis.modes.rows(); ++r) {
    std::vector<double> row{static_cast<double>(r)};
    for (int k = 0; k < basis.q(); ++k) row.push_back(basis.modes(r, k));
    rows.push_back(std::move(row));
  }
  io::write_csv(modes_csv, header, rows);
}

PcaBasis read_pca(const std::filesystem::path& json_path, const std::filesystem::path& modes_csv) {
  const nlohmann::json j = io::read_json(json_path);
  PcaBasis basis;
  const auto sv = j.at("singular_values").get<std::vector<double>>();
  const auto mean = j.at("mean").get<std::vector<double>>();
  basis.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), sv.size());
  basis.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
  const int q = j.at("q");

  const io::Csv csv = io::read_csv(modes_csv);
  basis.modes.resize(basis.mean.size(), q);
  if (csv.rows.size() != static_cast<size_t>(basis.mean.size()))
    throw artifact_error("read_pca: mode row count does not match the mean length");
  for (const auto& row : csv.rows) {
    const auto r = static_cast<Eigen::Index>(row[0]);
    for (int k = 0; k < q; ++k) basis.modes(r, k) = row[1 + k];
  }
  return basis;
}

}  // namespace latmap::latent
