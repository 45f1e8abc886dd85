#pragma once

#include <filesystem>
#include <vector>

#include "latmap/complex_geom.hpp"

namespace latmap::conformal {

using geom::BoundaryCurve;
using geom::Cplx;

// Fixed computational domain: closed annulus 1 <= |z| <= r_outer with a
// tensor grid, rho_i = 1 + i*(r-1)/(n_rho-1), theta_j = 2*pi*j/n_theta.
// Node (i,j) has flat index i*n_theta + j.
struct ReferenceAnnulus {
  double r_outer = 2.0;
  int n_rho = 48;
  int n_theta = 96;

  int node_count() const { return n_rho * n_theta; }
  int node_index(int i, int j) const { return i * n_theta + j; }
  double rho(int i) const { return 1.0 + (r_outer - 1.0) * i / (n_rho - 1); }
  double theta(int j) const;
  Cplx node(int i, int j) const;
  // Refinement that keeps the original nodes: (i,j) -> (f*i, f*j).
  ReferenceAnnulus refined(int factor) const;
};

// Truncated Laurent series of an exterior map
//   g(z) = c1*z + c0 + sum_{k>=1} cneg[k-1] * z^{-k},
// conformal on |z| >= 1 with g(inf) = inf and c1 real positive (rotation
// gauge). g maps the unit circle onto the inner boundary of the target
// domain; the annulus 1 <= |z| <= r_outer maps onto the doubly connected
// domain itself. In the unit-disk convention (g_d on |w| <= 1 with
// g_d(0) = inf) this is g_d(1/z), so composing with the inversion
// h(z) = 1/z is built in.
struct ConformalMap {
  Cplx c1;
  Cplx c0;
  std::vector<Cplx> cneg;
  double residual = 0.0;  // max boundary distance achieved by the fit
  double r_outer = 2.0;

  Cplx eval(Cplx z) const;
  Cplx deriv(Cplx z) const;
};

struct FitOptions {
  int modes = 64;        // K, number of negative powers
  double tol = 1e-6;     // accepted max boundary residual
  int max_iters = 60;    // alternation rounds
};

// Inner curve, derived outer curve and the map tying them to the annulus.
struct DoublyConnectedMap {
  ConformalMap map;
  BoundaryCurve inner;
  BoundaryCurve outer;
};

// Fits the exterior map of a simple closed curve. The boundary
// correspondence is recovered first by driving the spectral content of the
// reparameterized samples on modes k >= 2 to zero (for the true exterior
// parameterization the spectrum lives on k <= 1); the coefficients then
// follow from least squares, with a few rounds of foot-point polish and the
// rotation gauge renormalized. Throws numeric_error with the final residual
// if the tolerance is not reached.
ConformalMap fit_exterior_map(const BoundaryCurve& inner, const FitOptions& opt);

// Fit plus the passively mapped outer boundary (image of |z| = r_outer,
// sampled at the grid theta values).
DoublyConnectedMap build_domain_map(const BoundaryCurve& inner, const ReferenceAnnulus& ref,
                                    const FitOptions& opt);

inline Cplx invert(Cplx z) { return 1.0 / z; }

// phi^{-1}: annulus point -> domain point. Equals g(1/p) in the unit-disk
// convention; with the exterior series above that is a direct evaluation.
Cplx map_annulus_to_domain(const ConformalMap& m, Cplx p);

// phi: domain point -> annulus point, by damped Newton with multistart.
// The result satisfies 1 - tol <= |p| <= r_outer + tol before clamping.
Cplx map_domain_to_annulus(const ConformalMap& m, Cplx q, double tol = 1e-10);

struct ConformalityReport {
  double max_rel_deriv_err = 0.0;  // analytic vs central-difference derivative
  double min_abs_deriv = 0.0;      // injectivity indicator (must stay > 0)
};

// Derivative consistency sampled on the circles |z| in {1.05, 1.5, 3}.
ConformalityReport conformality_check(const ConformalMap& m);

void write_map_json(const std::filesystem::path& path, const ConformalMap& m);
ConformalMap read_map_json(const std::filesystem::path& path);

}  // namespace latmap::conformal
