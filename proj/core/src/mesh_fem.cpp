#include "latmap/mesh_fem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"
#include "latmap/rng.hpp"

namespace latmap::fem {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

double tri_area(const TriMesh& m, const std::array<int, 3>& t) {
  const double ax = m.x[t[0]], ay = m.y[t[0]];
  return 0.5 * ((m.x[t[1]] - ax) * (m.y[t[2]] - ay) - (m.x[t[2]] - ax) * (m.y[t[1]] - ay));
}

void finalize_mesh(TriMesh& mesh) {
  mesh.min_area = std::numeric_limits<double>::max();
  mesh.min_angle_deg = 180.0;
  for (const auto& t : mesh.tris) {
    const double area = tri_area(mesh, t);
    if (!(area > 0))
      throw numeric_error("mesh: inverted or degenerate triangle (area " + io::fmt_double(area) + ")");
    mesh.min_area = std::min(mesh.min_area, area);
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3], c = t[(k + 2) % 3];
      const double ux = mesh.x[b] - mesh.x[a], uy = mesh.y[b] - mesh.y[a];
      const double vx = mesh.x[c] - mesh.x[a], vy = mesh.y[c] - mesh.y[a];
      const double ang = std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy);
      mesh.min_angle_deg = std::min(mesh.min_angle_deg, ang * 180.0 / 3.14159265358979323846);
    }
  }

  // normalized arc length along each boundary ring, starting at j = 0
  auto ring_arclength = [&](int i, double& perimeter_out) {
    std::vector<double> acc(mesh.n_theta + 1, 0.0);
    for (int j = 0; j < mesh.n_theta; ++j) {
      const int a = mesh.node_index(i, j);
      const int b = mesh.node_index(i, (j + 1) % mesh.n_theta);
      acc[j + 1] = acc[j] + std::hypot(mesh.x[b] - mesh.x[a], mesh.y[b] - mesh.y[a]);
    }
    perimeter_out = acc[mesh.n_theta];
    for (int j = 0; j < mesh.n_theta; ++j)
      mesh.bdy_s[mesh.node_index(i, j)] = acc[j] / perimeter_out;
  };
  ring_arclength(0, mesh.inner_perimeter);
  ring_arclength(mesh.n_rho - 1, mesh.outer_perimeter);
}

TriMesh mesh_from_nodes(const ReferenceAnnulus& ref, std::vector<double> x, std::vector<double> y) {
  TriMesh mesh;
  mesh.n_rho = ref.n_rho;
  mesh.n_theta = ref.n_theta;
  mesh.x = std::move(x);
  mesh.y = std::move(y);
  const int n = mesh.node_count();
  mesh.tag.assign(n, NodeTag::Interior);
  mesh.bdy_s.assign(n, 0.0);
  for (int j = 0; j < ref.n_theta; ++j) {
    mesh.tag[mesh.node_index(0, j)] = NodeTag::InnerBoundary;
    mesh.tag[mesh.node_index(ref.n_rho - 1, j)] = NodeTag::OuterBoundary;
  }
  mesh.tris.reserve(2 * (ref.n_rho - 1) * ref.n_theta);
  for (int i = 0; i + 1 < ref.n_rho; ++i) {
    for (int j = 0; j < ref.n_theta; ++j) {
      const int jn = (j + 1) % ref.n_theta;
      const int n00 = mesh.node_index(i, j);
      const int n10 = mesh.node_index(i + 1, j);
      const int n11 = mesh.node_index(i + 1, jn);
      const int n01 = mesh.node_index(i, jn);
      mesh.tris.push_back({n00, n10, n11});
      mesh.tris.push_back({n00, n11, n01});
    }
  }
  finalize_mesh(mesh);
  return mesh;
}
}  // namespace

TriMesh mesh_annulus_grid(const ReferenceAnnulus& ref) {
  std::vector<double> x(ref.node_count()), y(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i)
    for (int j = 0; j < ref.n_theta; ++j) {
      const auto p = ref.node(i, j);
      x[ref.node_index(i, j)] = p.real();
      y[ref.node_index(i, j)] = p.imag();
    }
  return mesh_from_nodes(ref, std::move(x), std::move(y));
}

TriMesh mesh_pushforward(const ConformalMap& map, const ReferenceAnnulus& ref) {
  std::vector<double> x(ref.node_count()), y(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i)
    for (int j = 0; j < ref.n_theta; ++j) {
      const auto p = map.eval(ref.node(i, j));
      x[ref.node_index(i, j)] = p.real();
      y[ref.node_index(i, j)] = p.imag();
    }
  return mesh_from_nodes(ref, std::move(x), std::move(y));
}

int mesh_euler_characteristic(const TriMesh& mesh) {
  std::vector<std::int64_t> edges;
  edges.reserve(3 * mesh.tris.size());
  for (const auto& t : mesh.tris)
    for (int k = 0; k < 3; ++k) {
      const std::int64_t a = t[k], b = t[(k + 1) % 3];
      edges.push_back((std::min(a, b) << 32) | std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return mesh.node_count() - static_cast<int>(edges.size()) + static_cast<int>(mesh.tris.size());
}

double NeumannData::eval(double s) const {
  double acc = 0.0;
  for (size_t k = 0; k < coeffs.size(); ++k) {
    const double w = kTwoPi * static_cast<double>(k + 1) * s;
    acc += coeffs[k][0] * std::cos(w) + coeffs[k][1] * std::sin(w);
  }
  return acc;
}

NeumannData sample_neumann(std::uint64_t seed, int k_modes, double perimeter) {
  if (k_modes < 1) throw config_error("sample_neumann: need at least one mode");
  Rng rng(seed);
  NeumannData bc;
  bc.perimeter = perimeter;
  bc.coeffs.resize(k_modes);
  for (int k = 1; k <= k_modes; ++k) {
    bc.coeffs[k - 1][0] = rng.uniform(-1.0, 1.0) / k;
    bc.coeffs[k - 1][1] = rng.uniform(-1.0, 1.0) / k;
  }
  return bc;
}

FemSolution assemble_and_solve(const TriMesh& mesh, const NeumannData& bc) {
  const int n = mesh.node_count();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * mesh.tris.size() + 2 * static_cast<size_t>(n));
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);

  for (const auto& t : mesh.tris) {
    const double area = tri_area(mesh, t);
    double bvec[3], cvec[3];
    for (int k = 0; k < 3; ++k) {
      const int p1 = t[(k + 1) % 3], p2 = t[(k + 2) % 3];
      bvec[k] = mesh.y[p1] - mesh.y[p2];
      cvec[k] = mesh.x[p2] - mesh.x[p1];
    }
    for (int r = 0; r < 3; ++r) {
      mass(t[r]) += area / 3.0;
      for (int c = 0; c < 3; ++c)
        trip.emplace_back(t[r], t[c], (bvec[r] * bvec[c] + cvec[r] * cvec[c]) / (4.0 * area));
    }
  }

  // boundary load: trapezoidal quadrature of b over the outer ring
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd bdy_w = Eigen::VectorXd::Zero(n);
  const int last = mesh.n_rho - 1;
  for (int j = 0; j < mesh.n_theta; ++j) {
    const int a = mesh.node_index(last, j);
    const int b = mesh.node_index(last, (j + 1) % mesh.n_theta);
    const double len = std::hypot(mesh.x[b] - mesh.x[a], mesh.y[b] - mesh.y[a]);
    f(a) += 0.5 * len * bc.eval(mesh.bdy_s[a]);
    f(b) += 0.5 * len * bc.eval(mesh.bdy_s[b]);
    bdy_w(a) += 0.5 * len;
    bdy_w(b) += 0.5 * len;
  }

  FemSolution sol;
  // The continuous data has exact zero mean but its trapezoidal quadrature
  // over the polygonal ring does not; remove the defect so the discrete
  // problem is exactly compatible.
  sol.load_correction = f.sum();
  f -= (sol.load_correction / bdy_w.sum()) * bdy_w;
  sol.load_sum = f.sum();

  Eigen::SparseMatrix<double> stiff(n, n);
  stiff.setFromTriplets(trip.begin(), trip.end());

  // mean-zero constraint via a Lagrange multiplier in an augmented system
  for (int i = 0; i < n; ++i) {
    trip.emplace_back(i, n, mass(i));
    trip.emplace_back(n, i, mass(i));
  }
  Eigen::SparseMatrix<double> aug(n + 1, n + 1);
  aug.setFromTriplets(trip.begin(), trip.end());
  aug.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(aug);
  lu.factorize(aug);
  if (lu.info() != Eigen::Success) throw numeric_error("assemble_and_solve: factorization failed");
  Eigen::VectorXd rhs(n + 1);
  rhs.head(n) = f;
  rhs(n) = 0.0;
  const Eigen::VectorXd xsol = lu.solve(rhs);
  if (!xsol.allFinite()) throw numeric_error("assemble_and_solve: solve produced non-finite values");

  sol.u.assign(xsol.data(), xsol.data() + n);
  sol.lagrange = xsol(n);

  const Eigen::VectorXd ku = stiff * xsol.head(n);
  for (int i = 0; i < n; ++i) {
    if (mesh.tag[i] == NodeTag::InnerBoundary) sol.flux_inner += ku(i);
    if (mesh.tag[i] == NodeTag::OuterBoundary) {
      sol.flux_outer += ku(i);
      sol.load_outer += f(i);
    }
  }
  return sol;
}

double annulus_oracle_eval(const NeumannData& bc, double r_outer, double rho, double theta) {
  // u = sum_k (a_k cos k theta + b_k sin k theta) * (rho^k + rho^-k) / R'_k(r),
  // R'_k(r) = k (r^{k-1} - r^{-k-1}); the inner Neumann condition is built in.
  double acc = 0.0;
  for (size_t idx = 0; idx < bc.coeffs.size(); ++idx) {
    const int k = static_cast<int>(idx) + 1;
    const double dr = k * (std::pow(r_outer, k - 1) - std::pow(r_outer, -k - 1));
    const double radial = (std::pow(rho, k) + std::pow(rho, -k)) / dr;
    acc += radial * (bc.coeffs[idx][0] * std::cos(k * theta) + bc.coeffs[idx][1] * std::sin(k * theta));
  }
  return acc;
}

std::vector<double> annulus_oracle_field(const ReferenceAnnulus& ref, const NeumannData& bc) {
  std::vector<double> u(ref.node_count());
  for (int i = 0; i < ref.n_rho; ++i)
    for (int j = 0; j < ref.n_theta; ++j)
      u[ref.node_index(i, j)] = annulus_oracle_eval(bc, ref.r_outer, ref.rho(i), ref.theta(j));
  return u;
}

std::vector<double> lumped_mass(const TriMesh& mesh) {
  std::vector<double> mass(mesh.node_count(), 0.0);
  for (const auto& t : mesh.tris) {
    const double third = tri_area(mesh, t) / 3.0;
    for (int k = 0; k < 3; ++k) mass[t[k]] += third;
  }
  return mass;
}

double mass_weighted_mean(const TriMesh& mesh, const std::vector<double>& values) {
  const std::vector<double> mass = lumped_mass(mesh);
  double acc = 0.0, total = 0.0;
  for (int i = 0; i < mesh.node_count(); ++i) {
    acc += mass[i] * values[i];
    total += mass[i];
  }
  return acc / total;
}

struct FieldSampler::Impl {
  const TriMesh& mesh;
  double x0, y0, inv_hx, inv_hy;
  int nx, ny;
  std::vector<std::vector<int>> cells;
  std::vector<std::array<int, 2>> bdy_edges;

  explicit Impl(const TriMesh& m) : mesh(m) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (int i = 0; i < m.node_count(); ++i) {
      xmin = std::min(xmin, m.x[i]);
      xmax = std::max(xmax, m.x[i]);
      ymin = std::min(ymin, m.y[i]);
      ymax = std::max(ymax, m.y[i]);
    }
    const double pad = 1e-9 * std::max(xmax - xmin, ymax - ymin) + 1e-300;
    x0 = xmin - pad;
    y0 = ymin - pad;
    const int target = std::clamp(static_cast<int>(std::sqrt(m.tris.size() / 2.0)), 8, 512);
    nx = ny = target;
    inv_hx = nx / (xmax - x0 + pad);
    inv_hy = ny / (ymax - y0 + pad);
    cells.resize(static_cast<size_t>(nx) * ny);
    for (int t = 0; t < static_cast<int>(m.tris.size()); ++t) {
      const auto& tri = m.tris[t];
      double txmin = 1e300, txmax = -1e300, tymin = 1e300, tymax = -1e300;
      for (int k = 0; k < 3; ++k) {
        txmin = std::min(txmin, m.x[tri[k]]);
        txmax = std::max(txmax, m.x[tri[k]]);
        tymin = std::min(tymin, m.y[tri[k]]);
        tymax = std::max(tymax, m.y[tri[k]]);
      }
      const int cx0 = std::clamp(static_cast<int>((txmin - x0) * inv_hx), 0, nx - 1);
      const int cx1 = std::clamp(static_cast<int>((txmax - x0) * inv_hx), 0, nx - 1);
      const int cy0 = std::clamp(static_cast<int>((tymin - y0) * inv_hy), 0, ny - 1);
      const int cy1 = std::clamp(static_cast<int>((tymax - y0) * inv_hy), 0, ny - 1);
      for (int cy = cy0; cy <= cy1; ++cy)
        for (int cx = cx0; cx <= cx1; ++cx) cells[static_cast<size_t>(cy) * nx + cx].push_back(t);
    }
    const int last = m.n_rho - 1;
    for (int j = 0; j < m.n_theta; ++j) {
      bdy_edges.push_back({m.node_index(0, j), m.node_index(0, (j + 1) % m.n_theta)});
      bdy_edges.push_back({m.node_index(last, j), m.node_index(last, (j + 1) % m.n_theta)});
    }
  }

  bool bary(int t, double px, double py, double* lam) const {
    const auto& tri = mesh.tris[t];
    const double ax = mesh.x[tri[0]], ay = mesh.y[tri[0]];
    const double d = (mesh.x[tri[1]] - ax) * (mesh.y[tri[2]] - ay) -
                     (mesh.x[tri[2]] - ax) * (mesh.y[tri[1]] - ay);
    lam[1] = ((px - ax) * (mesh.y[tri[2]] - ay) - (py - ay) * (mesh.x[tri[2]] - ax)) / d;
    lam[2] = ((py - ay) * (mesh.x[tri[1]] - ax) - (px - ax) * (mesh.y[tri[1]] - ay)) / d;
    lam[0] = 1.0 - lam[1] - lam[2];
    const double tol = -1e-10;
    return lam[0] >= tol && lam[1] >= tol && lam[2] >= tol;
  }
};

FieldSampler::FieldSampler(const TriMesh& mesh) : impl_(std::make_unique<Impl>(mesh)) {}
FieldSampler::~FieldSampler() = default;
FieldSampler::FieldSampler(FieldSampler&&) noexcept = default;

double FieldSampler::sample(const std::vector<double>& u, double px, double py,
                            double boundary_tol, double* snap_dist) const {
  const Impl& s = *impl_;
  const int cx = std::clamp(static_cast<int>((px - s.x0) * s.inv_hx), 0, s.nx - 1);
  const int cy = std::clamp(static_cast<int>((py - s.y0) * s.inv_hy), 0, s.ny - 1);
  double lam[3];
  for (int ring = 0; ring <= 2; ++ring) {
    for (int dy = -ring; dy <= ring; ++dy) {
      for (int dx = -ring; dx <= ring; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
        const int gx = cx + dx, gy = cy + dy;
        if (gx < 0 || gx >= s.nx || gy < 0 || gy >= s.ny) continue;
        for (int t : s.cells[static_cast<size_t>(gy) * s.nx + gx]) {
          if (s.bary(t, px, py, lam)) {
            if (snap_dist) *snap_dist = 0.0;
            const auto& tri = s.mesh.tris[t];
            return lam[0] * u[tri[0]] + lam[1] * u[tri[1]] + lam[2] * u[tri[2]];
          }
        }
      }
    }
  }
  // not inside any triangle: allow a controlled snap to the nearest boundary edge
  double best = 1e300, val = 0.0;
  for (const auto& e : s.bdy_edges) {
    const double axp = s.mesh.x[e[0]], ayp = s.mesh.y[e[0]];
    const double bxp = s.mesh.x[e[1]], byp = s.mesh.y[e[1]];
    const double ex = bxp - axp, ey = byp - ayp;
    const double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((px - axp) * ex + (py - ayp) * ey) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (axp + t * ex), dy = py - (ayp + t * ey);
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) {
      best = d2;
      val = (1.0 - t) * u[e[0]] + t * u[e[1]];
    }
  }
  const double dist = std::sqrt(best);
  if (dist > boundary_tol)
    throw numeric_error("FieldSampler: point (" + io::fmt_double(px) + ", " + io::fmt_double(py) +
                        ") is outside the mesh by " + io::fmt_double(dist));
  if (snap_dist) *snap_dist = dist;
  return val;
}

void write_mesh(const std::filesystem::path& nodes_csv, const std::filesystem::path& tris_csv,
                const TriMesh& mesh) {
  std::vector<std::vector<double>> rows;
  rows.reserve(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i)
    rows.push_back({static_cast<double>(i), mesh.x[i], mesh.y[i],
                    static_cast<double>(static_cast<int>(mesh.tag[i])), mesh.bdy_s[i]});
  io::write_csv(nodes_csv, "id,x,y,tag,s", rows);
  rows.clear();
  rows.reserve(mesh.tris.size());
  for (const auto& t : mesh.tris)
    rows.push_back({static_cast<double>(t[0]), static_cast<double>(t[1]), static_cast<double>(t[2])});
  io::write_csv(tris_csv, "n0,n1,n2", rows);
}

TriMesh read_mesh(const std::filesystem::path& nodes_csv, const std::filesystem::path& tris_csv) {
  const io::Csv nodes = io::read_csv(nodes_csv);
  const io::Csv tris = io::read_csv(tris_csv);
  TriMesh mesh;
  const int n = static_cast<int>(nodes.rows.size());
  mesh.x.resize(n);
  mesh.y.resize(n);
  mesh.tag.resize(n);
  mesh.bdy_s.resize(n);
  int inner_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& row = nodes.rows[i];
    const int id = static_cast<int>(row[0]);
    mesh.x[id] = row[1];
    mesh.y[id] = row[2];
    mesh.tag[id] = static_cast<NodeTag>(static_cast<int>(row[3]));
    mesh.bdy_s[id] = row[4];
    if (mesh.tag[id] == NodeTag::InnerBoundary) ++inner_count;
  }
  mesh.n_theta = inner_count;
  mesh.n_rho = n / inner_count;
  for (const auto& row : tris.rows)
    mesh.tris.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), static_cast<int>(row[2])});
  finalize_mesh(mesh);
  return mesh;
}

void write_field(const std::filesystem::path& path, const std::vector<double>& u) {
  std::vector<std::vector<double>> rows;
  rows.reserve(u.size());
  for (size_t i = 0; i < u.size(); ++i) rows.push_back({static_cast<double>(i), u[i]});
  io::write_csv(path, "id,u", rows);
}

std::vector<double> read_field(const std::filesystem::path& path) {
  const io::Csv csv = io::read_csv(path);
  std::vector<double> u(csv.rows.size());
  for (const auto& row : csv.rows) u[static_cast<size_t>(row[0])] = row[1];
  return u;
}

void write_neumann_json(const std::filesystem::path& path, const NeumannData& bc) {
  nlohmann::json j;
  auto& arr = j["coeffs"] = nlohmann::json::array();
  for (const auto& c : bc.coeffs) arr.push_back({c[0], c[1]});
  io::write_json(path, j);
}

NeumannData read_neumann_json(const std::filesystem::path& path, double perimeter) {
  const nlohmann::json j = io::read_json(path);
  NeumannData bc;
  bc.perimeter = perimeter;
  for (const auto& c : j.at("coeffs")) bc.coeffs.push_back({c[0], c[1]});
  return bc;
}

}  // namespace latmap::fem
