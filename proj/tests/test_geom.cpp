#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "latmap/complex_geom.hpp"
#include "latmap/errors.hpp"
#include "latmap/rng.hpp"

using namespace latmap;
using geom::Cplx;

namespace {
constexpr double kPi = 3.14159265358979323846;

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "latmap_test_geom";
  std::filesystem::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("shape parameters follow the documented affine map of the draws") {
  for (std::uint64_t seed : {1ull, 17ull, 923ull}) {
    const auto sp = geom::sample_shape_params(seed);
    CHECK(sp.seed == seed);
    CHECK(sp.xi0 >= 0.0);
    CHECK(sp.xi0 < 1.0);
    CHECK(sp.a == doctest::Approx(1.1 + 0.2 * sp.xi0).epsilon(1e-15));
    CHECK(sp.xc == doctest::Approx(0.3 * (sp.xi1 - 0.5)).epsilon(1e-12));
    CHECK(sp.yc == doctest::Approx(0.3 * (sp.xi2 - 0.5)).epsilon(1e-12));
    // redrawing the same seed reproduces the same parameters
    const auto sp2 = geom::sample_shape_params(seed);
    CHECK(sp2.a == sp.a);
    CHECK(sp2.xc == sp.xc);
    CHECK(sp2.yc == sp.yc);
  }
}

TEST_CASE("joukowski transform hits known values and rejects the pole") {
  // z + a^2/z at z=a gives 2a; at z=i with a=1 gives 0
  CHECK(geom::joukowski(Cplx(1.3, 0), 1.3).real() == doctest::Approx(2.6));
  CHECK(std::abs(geom::joukowski(Cplx(0, 1), 1.0)) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(geom::joukowski(Cplx(0, 0), 1.2), numeric_error);
}

TEST_CASE("centered circle maps to the ellipse with semi-axes 1+a^2 and a^2-1") {
  const double a = 1.2;
  geom::ShapeParams sp;
  sp.a = a;
  sp.xc = 0.0;
  sp.yc = 0.0;
  const auto curve = geom::generate_inner_boundary(sp, 256);
  REQUIRE(curve.size() == 256);
  for (const Cplx& p : curve.points) {
    const double ex = p.real() / (1.0 + a * a);
    const double ey = p.imag() / (a * a - 1.0);
    CHECK(ex * ex + ey * ey == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(geom::curve_metrics(curve.points).signed_area > 0);  // reoriented ccw
}

TEST_CASE("inner boundary generation is deterministic and simple") {
  const auto sp = geom::sample_shape_params(5);
  const auto c1 = geom::generate_inner_boundary(sp, 128);
  const auto c2 = geom::generate_inner_boundary(sp, 128);
  REQUIRE(c1.size() == c2.size());
  for (int i = 0; i < c1.size(); ++i) CHECK(c1.points[i] == c2.points[i]);
  CHECK(geom::curve_is_simple(c1.points));
  CHECK(geom::winding_number(c1.points, geom::curve_metrics(c1.points).centroid) == 1);
}

TEST_CASE("self-intersecting draws are rejected as degenerate") {
  // center far along the x axis pushes the image through the critical value
  geom::ShapeParams sp;
  sp.a = 1.1;
  sp.xc = 0.21;
  sp.yc = 0.0;
  CHECK_THROWS_AS(geom::generate_inner_boundary(sp, 256), degenerate_draw_error);
}

TEST_CASE("curve metrics recover circle area, perimeter, and centroid") {
  const auto c = geom::circle_curve(1.5, 4096, geom::CurveRole::Inner);
  const auto m = geom::curve_metrics(c.points);
  CHECK(m.signed_area == doctest::Approx(kPi * 1.5 * 1.5).epsilon(1e-5));
  CHECK(m.perimeter == doctest::Approx(2 * kPi * 1.5).epsilon(1e-5));
  CHECK(std::abs(m.centroid) < 1e-12);
  CHECK(geom::mean_radius(c) == doctest::Approx(1.5).epsilon(1e-6));
}

TEST_CASE("clockwise polygons have negative signed area") {
  auto c = geom::circle_curve(1.0, 64, geom::CurveRole::Inner);
  std::reverse(c.points.begin(), c.points.end());
  CHECK(geom::curve_metrics(c.points).signed_area < 0);
}

TEST_CASE("winding number distinguishes inside from outside") {
  const auto c = geom::circle_curve(1.0, 128, geom::CurveRole::Inner);
  CHECK(geom::winding_number(c.points, Cplx(0, 0)) == 1);
  CHECK(geom::winding_number(c.points, Cplx(2.5, 0)) == 0);
}

TEST_CASE("resampling preserves the curve and hits the requested count") {
  const auto sp = geom::sample_shape_params(9);
  const auto c = geom::generate_inner_boundary(sp, 512);
  const auto r = geom::resample_closed(c, 64);
  REQUIRE(r.size() == 64);
  // every resampled point lies on the original polyline
  for (const Cplx& p : r.points) {
    double d2 = 0.0;
    geom::project_arclength(c.points, p, &d2);
    CHECK(std::sqrt(d2) < 1e-9);
  }
  // perimeter is approximately preserved
  const double p0 = geom::curve_metrics(c.points).perimeter;
  const double p1 = geom::curve_metrics(r.points).perimeter;
  CHECK(p1 == doctest::Approx(p0).epsilon(0.01));
}

TEST_CASE("arclength projection is monotone along a circle") {
  const auto c = geom::circle_curve(2.0, 256, geom::CurveRole::Outer);
  double prev = -1.0;
  for (int k = 0; k < 8; ++k) {
    const double ang = 2 * kPi * (k + 0.25) / 8;
    const double s = geom::project_arclength(c.points, std::polar(2.0, ang));
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
    CHECK(s > prev);
    prev = s;
  }
  // projecting an off-curve point lands on the nearest arc
  double d2 = 0.0;
  geom::project_arclength(c.points, Cplx(3.0, 0.0), &d2);
  CHECK(std::sqrt(d2) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("curve csv roundtrip is lossless") {
  const auto sp = geom::sample_shape_params(23);
  const auto c = geom::generate_inner_boundary(sp, 96);
  const auto path = temp_dir() / "curve.csv";
  geom::write_curve_csv(path, c);
  const auto back = geom::read_curve_csv(path, geom::CurveRole::Inner);
  REQUIRE(back.size() == c.size());
  for (int i = 0; i < c.size(); ++i) {
    CHECK(back.points[i].real() == c.points[i].real());
    CHECK(back.points[i].imag() == c.points[i].imag());
  }
}

TEST_CASE("seed mixing separates streams and indices") {
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 2, 4));
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 3));
  CHECK(mix_seed(1, 2, 3) != mix_seed(2, 2, 3));
  CHECK(mix_seed(7, 7, 7) == mix_seed(7, 7, 7));
}

TEST_CASE("rng uniforms are deterministic and in range") {
  Rng r1(42), r2(42);
  for (int i = 0; i < 100; ++i) {
    const double u = r1.uniform01();
    CHECK(u == r2.uniform01());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng r3(42);
  for (int i = 0; i < 1000; ++i) {
    const auto v = r3.below(13);
    CHECK(v < 13);
  }
}
