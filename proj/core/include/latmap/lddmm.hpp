#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "latmap/complex_geom.hpp"

namespace latmap::lddmm {

using Mat2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct KernelConfig {
  double sigma = 0.4;         // Gaussian kernel width, domain length units
  int timesteps = 10;         // time knots of the energy quadrature
  int substeps = 2;           // RK4 steps per knot interval
  double lambda_match = 50.0; // endpoint matching weight
  int max_iters = 300;
  double step_size = 0.1;     // initial gradient step, adapted by backtracking
  double grad_tol = 1e-5;     // sup-norm stopping threshold on the gradient
  bool use_adjoint = true;    // reverse-sweep gradient; false = finite differences

  int steps() const { return timesteps * substeps; }
  void validate() const;
};

// Geodesic flow determined by initial landmark positions and momenta under
// the Gaussian-kernel Hamiltonian
//   H(q, p) = 1/2 sum_ij exp(-|q_i - q_j|^2 / (2 sigma^2)) p_i . p_j,
// with passive points advected by the induced velocity field
//   v_t(x) = sum_j exp(-|x - q_j(t)|^2 / (2 sigma^2)) p_j(t).
struct DiffeoFlow {
  Mat2 q0, p0;
  KernelConfig kernel;
  std::vector<Mat2> knots_q, knots_p;  // landmark states at knots 0..timesteps

  int landmarks() const { return static_cast<int>(q0.rows()); }
};

struct RegistrationResult {
  DiffeoFlow flow;
  double energy = 0.0;
  double match_error = 0.0;  // mean endpoint distance to the targets
  bool converged = false;
  int iterations = 0;
  std::vector<double> energy_trace;  // accepted iterates, nonincreasing
};

// Integrates the landmark system and caches the knot states.
DiffeoFlow make_flow(Mat2 q0, Mat2 p0, const KernelConfig& cfg);

// Endpoint positions of passive points advected from t=0 to t=1 (forward)
// or t=1 to t=0 (inverse). Both throw numeric_error if any trajectory leaves
// a 10x bounding box of the initial configuration.
Mat2 flow_forward(const DiffeoFlow& flow, const Mat2& pts);
Mat2 flow_inverse(const DiffeoFlow& flow, const Mat2& pts);

// Registration objective for initial momenta p0 against landmark targets:
//   E = dt * sum_{t<T} p_t^T K(q_t) p_t + lambda * sum_j |q_j(1) - y_j|^2.
double flow_energy(const Mat2& q0, const Mat2& p0, const Mat2& target,
                   const KernelConfig& cfg, double* match_error = nullptr);

// dE/dp0, either by the adjoint sweep through the RK4 integration or by
// central finite differences (cfg.use_adjoint selects; FD is for testing).
Mat2 energy_gradient(const Mat2& q0, const Mat2& p0, const Mat2& target, const KernelConfig& cfg);

// Gradient descent with Armijo backtracking from p0 = 0.
RegistrationResult register_landmarks(const Mat2& source, const Mat2& target,
                                      const KernelConfig& cfg);

// Resamples each curve to landmarks_per_curve points (correspondence by the
// shared parameter index) and registers the stacked landmark sets.
RegistrationResult register_curves(const geom::BoundaryCurve& src_inner,
                                   const geom::BoundaryCurve& src_outer,
                                   const geom::BoundaryCurve& dst_inner,
                                   const geom::BoundaryCurve& dst_outer,
                                   const KernelConfig& cfg, int landmarks_per_curve);

// Minimum central-difference Jacobian determinant of the forward flow over
// the given points (positive = locally orientation-preserving everywhere).
double jacobian_min_det(const DiffeoFlow& flow, const Mat2& pts, double fd_step = 1e-4);

Mat2 curve_to_mat(const geom::BoundaryCurve& c);

void write_flow_json(const std::filesystem::path& path, const RegistrationResult& r);
RegistrationResult read_flow_json(const std::filesystem::path& path);

}  // namespace latmap::lddmm
