#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "latmap/conformal.hpp"

namespace latmap::fem {

using conformal::ConformalMap;
using conformal::ReferenceAnnulus;

enum class NodeTag : int { Interior = 0, InnerBoundary = 1, OuterBoundary = 2 };

// Triangulation of a doubly connected domain obtained by pushing the annulus
// tensor grid forward through a map (or the identity). Node (i,j) of the
// source grid keeps flat index i*n_theta + j; each grid quad is split into
// two counterclockwise triangles.
struct TriMesh {
  std::vector<double> x, y;
  std::vector<std::array<int, 3>> tris;
  std::vector<NodeTag> tag;
  std::vector<double> bdy_s;  // normalized arc length along own ring (boundary nodes; 0 elsewhere)
  int n_rho = 0, n_theta = 0;
  double min_angle_deg = 0.0;
  double min_area = 0.0;
  double inner_perimeter = 0.0;
  double outer_perimeter = 0.0;

  int node_count() const { return static_cast<int>(x.size()); }
  int node_index(int i, int j) const { return i * n_theta + j; }
};

TriMesh mesh_annulus_grid(const ReferenceAnnulus& ref);
TriMesh mesh_pushforward(const ConformalMap& map, const ReferenceAnnulus& ref);

int mesh_euler_characteristic(const TriMesh& mesh);

// Neumann data on the outer boundary as a zero-mean Fourier series in the
// normalized arc length s in [0,1):
//   b(s) = sum_k a_k cos(2 pi k s) + b_k sin(2 pi k s).
struct NeumannData {
  std::vector<std::array<double, 2>> coeffs;  // (a_k, b_k), k = 1..K
  double perimeter = 0.0;                     // of the boundary the data lives on

  double eval(double s) const;
};

// Coefficients iid uniform in [-1,1] scaled by 1/k.
NeumannData sample_neumann(std::uint64_t seed, int k_modes, double perimeter);

struct FemSolution {
  std::vector<double> u;          // nodal values, mass-weighted mean zero
  double lagrange = 0.0;          // multiplier of the mean constraint
  double load_correction = 0.0;   // compatibility defect removed from the load
  double load_sum = 0.0;          // sum of the corrected load vector
  double flux_inner = 0.0;        // sum of (K u) over inner boundary nodes
  double flux_outer = 0.0;        // sum of (K u) over outer boundary nodes
  double load_outer = 0.0;        // sum of the corrected load over outer nodes
};

// Laplace with zero Neumann data on the inner boundary and b on the outer
// one; the constant nullspace is fixed by a mass-weighted mean-zero
// constraint enforced with a Lagrange multiplier.
FemSolution assemble_and_solve(const TriMesh& mesh, const NeumannData& bc);

// Separation of variables on the annulus 1 <= rho <= r_outer with
// du/drho = 0 at rho = 1 and du/drho = b(theta/2pi) at rho = r_outer.
double annulus_oracle_eval(const NeumannData& bc, double r_outer, double rho, double theta);
std::vector<double> annulus_oracle_field(const ReferenceAnnulus& ref, const NeumannData& bc);

std::vector<double> lumped_mass(const TriMesh& mesh);
double mass_weighted_mean(const TriMesh& mesh, const std::vector<double>& values);

// Point evaluation of a P1 field with an acceleration grid. Points farther
// than boundary_tol from the mesh raise numeric_error; points within it are
// evaluated at their projection onto the nearest boundary edge and the snap
// distance is reported.
class FieldSampler {
 public:
  explicit FieldSampler(const TriMesh& mesh);
  ~FieldSampler();
  FieldSampler(FieldSampler&&) noexcept;
  FieldSampler(const FieldSampler&) = delete;

  double sample(const std::vector<double>& u, double px, double py,
                double boundary_tol = 1e-9, double* snap_dist = nullptr) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void write_mesh(const std::filesystem::path& nodes_csv, const std::filesystem::path& tris_csv,
                const TriMesh& mesh);
TriMesh read_mesh(const std::filesystem::path& nodes_csv, const std::filesystem::path& tris_csv);
void write_field(const std::filesystem::path& path, const std::vector<double>& u);
std::vector<double> read_field(const std::filesystem::path& path);
void write_neumann_json(const std::filesystem::path& path, const NeumannData& bc);
NeumannData read_neumann_json(const std::filesystem::path& path, double perimeter);

}  // namespace latmap::fem
