#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latmap/complex_geom.hpp"
#include "latmap/conformal.hpp"
#include "latmap/lddmm.hpp"
#include "latmap/mesh_fem.hpp"
#include "latmap/ot.hpp"

namespace latmap::latent {

using conformal::ReferenceAnnulus;

// One training/evaluation record on the fixed annulus grid: the transported
// solution field (grid mean removed), the transported boundary data at the
// outer-ring angles, and an optional geometry encoding.
struct LatentSample {
  Eigen::VectorXd u0;   // grid field, node order i*n_theta + j
  Eigen::VectorXd bc0;  // n_theta values
  Eigen::VectorXd geo;  // PCA coefficients; empty for the conformal backend
  geom::ShapeParams alpha_meta;
  std::string method;
  double defect = 0.0;    // harmonic defect of u0
  double max_snap = 0.0;  // largest boundary snap used during the pullback
};

struct PcaBasis {
  Eigen::VectorXd mean;
  Eigen::MatrixXd modes;  // columns, orthonormal
  Eigen::VectorXd singular_values;

  int q() const { return static_cast<int>(modes.cols()); }
};

std::vector<std::array<double, 2>> grid_points(const ReferenceAnnulus& ref);

struct PullbackResult {
  Eigen::VectorXd values;
  double max_snap = 0.0;
};

// P1 evaluation of nodal values at arbitrary points; points outside the mesh
// within snap_tol are evaluated on the nearest boundary edge.
PullbackResult pullback_field_at_points(const fem::TriMesh& mesh, const std::vector<double>& u,
                                        const std::vector<std::array<double, 2>>& pts,
                                        double snap_tol);

// Normalized arc length of the projection of p onto the outer boundary ring.
double outer_arclength(const fem::TriMesh& mesh, std::array<double, 2> p);

// RMS of the discrete polar Laplacian (central differences in rho, periodic
// in theta) over the interior grid rows.
double harmonic_defect(const Eigen::VectorXd& u0, const ReferenceAnnulus& ref);

// Separation-of-variables solution of the annulus Neumann problem whose
// outer flux density equals bc0 at the grid angles (zero inner flux); the
// Fourier coefficients come from the discrete transform of bc0. Used as the
// per-sample truncation floor for harmonic_defect.
Eigen::VectorXd annulus_field_from_boundary(const Eigen::VectorXd& bc0,
                                            const ReferenceAnnulus& ref);

struct BuildResult {
  LatentSample sample;
  Eigen::VectorXd displacement;  // (dx, dy) per grid node, interleaved; empty for conformal
};

// Conformal backend: the field is sampled at the images of the grid nodes
// and the boundary data is transported with the |g'| flux factor, so the
// latent problem is again a pure annulus Neumann problem.
BuildResult build_sample_conformal(const fem::TriMesh& fem_mesh, const fem::FemSolution& sol,
                                   const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                                   const conformal::ConformalMap& map,
                                   const ReferenceAnnulus& ref, double snap_tol);

// Registration backend: grid nodes ride the flow; values transport unchanged.
BuildResult build_sample_lddmm(const fem::TriMesh& fem_mesh, const fem::FemSolution& sol,
                               const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                               const lddmm::DiffeoFlow& flow, const ReferenceAnnulus& ref,
                               double snap_tol);

// Assignment backend: pure reindexing of nodal values on the coarse cloud.
BuildResult build_sample_ot(const fem::TriMesh& fem_mesh,
                            const std::vector<double>& values_on_cloud,
                            const std::vector<std::array<double, 2>>& cloud,
                            const fem::NeumannData& bc, const geom::ShapeParams& alpha,
                            const ot::TransportPermutation& perm, const ReferenceAnnulus& ref);

// Thin SVD of the centered rows; deterministic sign (largest-magnitude entry
// of each mode positive). Requires 2 <= q+? samples; q must not exceed the
// sample count or the dimension.
PcaBasis fit_pca(const Eigen::MatrixXd& rows, int q);
Eigen::VectorXd encode_geometry(const PcaBasis& basis, const Eigen::VectorXd& displacement);

void write_sample(const std::filesystem::path& dir, const LatentSample& s);
LatentSample read_sample(const std::filesystem::path& dir, const ReferenceAnnulus& ref);

void write_pca(const std::filesystem::path& json_path, const std::filesystem::path& modes_csv,
               const PcaBasis& basis);
PcaBasis read_pca(const std::filesystem::path& json_path, const std::filesystem::path& modes_csv);

}  // namespace latmap::latent
