#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace latmap::geom {

using Cplx = std::complex<double>;

// Randomized parameters of the Joukowski shape family. xi0..xi2 are the raw
// uniform draws (kept for provenance); a, xc, yc are what the geometry uses:
//   a  = 1.1 + 0.2*xi0          scale of the transform
//   xc = 0.3*(xi1 - 0.5)        center of the pre-image circle
//   yc = 0.3*(xi2 - 0.5)
struct ShapeParams {
  double xi0 = 0.0, xi1 = 0.0, xi2 = 0.0;
  double a = 0.0, xc = 0.0, yc = 0.0;
  std::uint64_t seed = 0;
};

enum class CurveRole { Inner, Outer };

// Closed curve sampled at m uniformly spaced parameter values; stored
// counterclockwise with points[j] at parameter theta_j = 2*pi*j/m.
struct BoundaryCurve {
  std::vector<Cplx> points;
  CurveRole role = CurveRole::Inner;

  int size() const { return static_cast<int>(points.size()); }
  double param(int j) const;  // 2*pi*j/m
};

struct CurveMetrics {
  double perimeter = 0.0;
  double signed_area = 0.0;  // positive for counterclockwise orientation
  Cplx centroid;             // area-weighted
};

// z + a^2/z. Throws numeric_error if |z| < 1e-12 (pole).
Cplx joukowski(Cplx z, double a);

ShapeParams sample_shape_params(std::uint64_t seed);

// Image of the circle e^{i theta} + (xc, yc) under the Joukowski transform,
// reoriented counterclockwise. Throws degenerate_draw_error if the image
// self-intersects (possible for extreme centers); callers advance the seed.
BoundaryCurve generate_inner_boundary(const ShapeParams& sp, int m);

CurveMetrics curve_metrics(const std::vector<Cplx>& pts);

// True when no two non-adjacent edges of the closed polyline intersect.
bool curve_is_simple(const std::vector<Cplx>& pts);

// Winding number of the closed polyline around z0 (integer for z0 off the curve).
int winding_number(const std::vector<Cplx>& pts, Cplx z0);

// Mean distance of the samples from the area centroid.
double mean_radius(const BoundaryCurve& c);

// Periodic linear resampling at m uniformly spaced parameter values.
BoundaryCurve resample_closed(const BoundaryCurve& c, int m);

// Circle of given radius about the origin, counterclockwise, m samples.
BoundaryCurve circle_curve(double radius, int m, CurveRole role);

// Projects a point onto the closed polyline; returns normalized arc length
// in [0,1) of the nearest point (and optionally the squared distance).
double project_arclength(const std::vector<Cplx>& pts, Cplx q, double* dist_sq = nullptr);

// CSV serialization, columns theta,x,y.
void write_curve_csv(const std::filesystem::path& path, const BoundaryCurve& c);
BoundaryCurve read_curve_csv(const std::filesystem::path& path, CurveRole role);

}  // namespace latmap::geom
