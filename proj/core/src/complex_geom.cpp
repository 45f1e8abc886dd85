#include "latmap/complex_geom.hpp"

#include <algorithm>
#include <cmath>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"
#include "latmap/rng.hpp"

namespace latmap::geom {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

double cross(Cplx o, Cplx u, Cplx v) {
  return (u.real() - o.real()) * (v.imag() - o.imag()) -
         (u.imag() - o.imag()) * (v.real() - o.real());
}

// Proper or touching intersection of segments [a,b] and [c,d].
bool segments_intersect(Cplx a, Cplx b, Cplx c, Cplx d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  auto on_segment = [](Cplx p, Cplx q, Cplx r) {
    return std::min(p.real(), q.real()) <= r.real() && r.real() <= std::max(p.real(), q.real()) &&
           std::min(p.imag(), q.imag()) <= r.imag() && r.imag() <= std::max(p.imag(), q.imag());
  };
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}
}  // namespace

double BoundaryCurve::param(int j) const {
  return kTwoPi * static_cast<double>(j) / static_cast<double>(points.size());
}

Cplx joukowski(Cplx z, double a) {
  if (std::abs(z) < 1e-12) throw numeric_error("joukowski: evaluation too close to the pole at 0");
  return z + (a * a) / z;
}

ShapeParams sample_shape_params(std::uint64_t seed) {
  Rng rng(seed);
  ShapeParams sp;
  sp.seed = seed;
  sp.xi0 = rng.uniform01();
  sp.xi1 = rng.uniform01();
  sp.xi2 = rng.uniform01();
  sp.a = 1.1 + 0.2 * sp.xi0;
  sp.xc = 0.3 * (sp.xi1 - 0.5);
  sp.yc = 0.3 * (sp.xi2 - 0.5);
  return sp;
}

BoundaryCurve generate_inner_boundary(const ShapeParams& sp, int m) {
  if (m < 8) throw config_error("generate_inner_boundary: need at least 8 samples");
  const Cplx c(sp.xc, sp.yc);
  BoundaryCurve curve;
  curve.role = CurveRole::Inner;
  curve.points.resize(m);
  for (int j = 0; j < m; ++j) {
    const double th = kTwoPi * j / m;
    curve.points[j] = joukowski(std::polar(1.0, th) + c, sp.a);
  }
  // The transform reverses the circle's orientation for this family; store
  // counterclockwise, keeping the theta=0 point first.
  if (curve_metrics(curve.points).signed_area < 0)
    std::reverse(curve.points.begin() + 1, curve.points.end());
  if (!curve_is_simple(curve.points))
    throw degenerate_draw_error("generate_inner_boundary: self-intersecting image (seed " +
                                std::to_string(sp.seed) + ")");
  return curve;
}

CurveMetrics curve_metrics(const std::vector<Cplx>& pts) {
  CurveMetrics mtr;
  const int m = static_cast<int>(pts.size());
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  for (int j = 0; j < m; ++j) {
    const Cplx p = pts[j];
    const Cplx q = pts[(j + 1) % m];
    mtr.perimeter += std::abs(q - p);
    const double w = p.real() * q.imag() - q.real() * p.imag();
    a2 += w;
    cx += (p.real() + q.real()) * w;
    cy += (p.imag() + q.imag()) * w;
  }
  mtr.signed_area = 0.5 * a2;
  if (std::abs(mtr.signed_area) > 1e-300)
    mtr.centroid = Cplx(cx / (3.0 * a2), cy / (3.0 * a2));
  return mtr;
}

bool curve_is_simple(const std::vector<Cplx>& pts) {
  const int m = static_cast<int>(pts.size());
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      // skip the shared-endpoint adjacencies (i,i+1) and (0,m-1)
      if (j == i + 1 || (i == 0 && j == m - 1)) continue;
      if (segments_intersect(pts[i], pts[(i + 1) % m], pts[j], pts[(j + 1) % m])) return false;
    }
  }
  return true;
}

int winding_number(const std::vector<Cplx>& pts, Cplx z0) {
  double total = 0.0;
  const int m = static_cast<int>(pts.size());
  for (int j = 0; j < m; ++j) {
    const Cplx u = pts[j] - z0;
    const Cplx v = pts[(j + 1) % m] - z0;
    total += std::atan2(u.real() * v.imag() - u.imag() * v.real(),
                        u.real() * v.real() + u.imag() * v.imag());
  }
  return static_cast<int>(std::lround(total / kTwoPi));
}

double mean_radius(const BoundaryCurve& c) {
  const Cplx ctr = curve_metrics(c.points).centroid;
  double acc = 0.0;
  for (const Cplx& p : c.points) acc += std::abs(p - ctr);
  return acc / static_cast<double>(c.points.size());
}

BoundaryCurve resample_closed(const BoundaryCurve& c, int m) {
  const int n = c.size();
  BoundaryCurve out;
  out.role = c.role;
  out.points.resize(m);
  for (int j = 0; j < m; ++j) {
    const double t = static_cast<double>(j) * n / static_cast<double>(m);
    const int k = static_cast<int>(t) % n;
    const double f = t - std::floor(t);
    out.points[j] = c.points[k] * (1.0 - f) + c.points[(k + 1) % n] * f;
  }
  return out;
}

BoundaryCurve circle_curve(double radius, int m, CurveRole role) {
  BoundaryCurve out;
  out.role = role;
  out.points.resize(m);
  for (int j = 0; j < m; ++j) out.points[j] = std::polar(radius, kTwoPi * j / m);
  return out;
}

double project_arclength(const std::vector<Cplx>& pts, Cplx q, double* dist_sq) {
  const int m = static_cast<int>(pts.size());
  double best = 1e300, best_len = 0.0;
  double acc = 0.0, total = 0.0;
  for (int j = 0; j < m; ++j) total += std::abs(pts[(j + 1) % m] - pts[j]);
  for (int j = 0; j < m; ++j) {
    const Cplx a = pts[j];
    const Cplx b = pts[(j + 1) % m];
    const Cplx ab = b - a;
    const double len2 = std::norm(ab);
    double t = 0.0;
    if (len2 > 0) {
      t = ((q - a).real() * ab.real() + (q - a).imag() * ab.imag()) / len2;
      t = std::clamp(t, 0.0, 1.0);
    }
    const Cplx proj = a + t * ab;
    const double d2 = std::norm(q - proj);
    if (d2 < best) {
      best = d2;
      best_len = acc + t * std::sqrt(len2);
    }
    acc += std::sqrt(len2);
  }
  if (dist_sq) *dist_sq = best;
  double s = best_len / total;
  if (s >= 1.0) s -= 1.0;
  return s;
}

void write_curve_csv(const std::filesystem::path& path, const BoundaryCurve& c) {
  std::vector<std::vector<double>> rows;
  rows.reserve(c.points.size());
  for (int j = 0; j < c.size(); ++j)
    rows.push_back({c.param(j), c.points[j].real(), c.points[j].imag()});
  io::write_csv(path, "theta,x,y", rows);
}

BoundaryCurve read_curve_csv(const std::filesystem::path& path, CurveRole role) {
  const io::Csv csv = io::read_csv(path);
  if (csv.columns != std::vector<std::string>{"theta", "x", "y"})
    throw artifact_error("unexpected curve csv header in " + path.string());
  BoundaryCurve c;
  c.role = role;
  c.points.reserve(csv.rows.size());
  for (const auto& row : csv.rows) c.points.emplace_back(row[1], row[2]);
  return c;
}

}  // namespace latmap::geom
